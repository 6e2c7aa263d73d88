#!/usr/bin/env python3
# Copyright 2026 The trace-exit Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the replay fixtures under fixtures/.

Every step of a fixture is scripted as (reasoning text, induced answer, target
confidence). Induced answer tokens carry a two-candidate distribution whose
normalized entropy is 1 - confidence, so the scored confidence of each step is
the target up to bisection error.
"""

import argparse
import json
import math
import random
import re
from pathlib import Path

FORMAT = "trace-exit-replay"
VERSION = 1


def binary_entropy_norm(p):
    q = 1.0 - p
    h = 0.0
    for x in (p, q):
        if x > 0:
            h -= x * math.log(x)
    return h / math.log(2)


def top_probability(confidence):
    """p in [0.5, 1] with normalized entropy of (p, 1-p) equal to 1 - confidence."""
    target = 1.0 - confidence
    if target >= 1.0:
        return 0.5
    lo, hi = 0.5, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if binary_entropy_norm(mid) > target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


TOKEN_RE = re.compile(r"\s*[A-Za-z]+|\s*\d|\s*[^\sA-Za-z\d]|\s+")


def tokenize(text, rng, split_words=()):
    """Word-ish tokens with leading spaces; words listed in split_words are cut in two."""
    out = []
    for m in TOKEN_RE.finditer(text):
        tok = m.group(0)
        word = tok.strip()
        if word in split_words and len(word) > 3:
            cut = len(tok) - len(word) + rng.randint(2, len(word) - 2)
            out.extend([tok[:cut], tok[cut:]])
        else:
            out.append(tok)
    assert "".join(out) == text
    return out


ALTERNATES = [" the", " a", ",", " is", " we", " to", " of", "."]


def main_token(text, rng):
    p = round(rng.uniform(0.55, 0.99), 4)
    alt = rng.choice([a for a in ALTERNATES if a != text])
    return {"kind": "token", "text": text, "top": [[text, p], [alt, round(1.0 - p, 4)]]}


def answer_pieces(answer):
    return [answer[i:i + 3] for i in range(0, len(answer), 3)] or [""]


def induction_record(step, answer, confidence):
    p = top_probability(confidence)
    tokens = []
    for piece in answer_pieces(answer):
        alt = piece + "0" if not piece.endswith("0") else piece + "1"
        tokens.append({"text": piece, "top": [[piece, p], [alt, 1.0 - p]]})
    tokens.append({"text": "}", "top": [["}", 0.995], ["}.", 0.005]]})
    return {"kind": "induction", "step": step, "text": answer + "}", "tokens": tokens}


def write_trace(path, question, gold, steps, rng, split_words=()):
    """steps: list of (text, answer, confidence)."""
    lines = [{"format": FORMAT, "version": VERSION, "question": question, "gold": gold,
              "complete": True, "stream_end": "natural", "coverage": "full"}]
    text = "".join(s[0] for s in steps)
    for tok in tokenize(text, rng, split_words):
        lines.append(main_token(tok, rng))
    for i, (_, answer, conf) in enumerate(steps, start=1):
        lines.append(induction_record(i, answer, conf))
    path.write_text("".join(json.dumps(l, ensure_ascii=False) + "\n" for l in lines), encoding="utf-8")


FIG11_QUESTION = ("Let w = e^{2 pi i / 1997}. Evaluate the sum of 1 / (1 + w^k) over k = 1, ..., 1997.")

FIG11_STEPS = [
    ("Pair the terms k and 1997 - k. Since w^{1997} = 1, the term 1/(1 + w^{-k}) equals w^k/(w^k + 1), "
     "so each pair adds up to 1. A rough first guess for the total is 1.", "1", 0.55),
    ("\nWait, the pairing covers many terms, not one. Counting the pairs gives a number close to 1997, "
     "so the total might simply be 1997.", "1997", 0.62),
    ("\nBut there are 1996 terms with k from 1 to 1996, which form 998 pairs, each summing to 1. "
     "That gives 998 for the sum.", "998", 0.91),
    ("\nWait, the range goes up to k = 1997, and w^{1997} = 1, so the last term is 1/(1 + 1) = 1/2. "
     "I missed it. The sum is 998 + 1/2 = 1997/2.", "1997/2", 0.95),
    ("\nLet me think about whether any term is undefined: 1 + w^k = 0 would need w^k = -1, "
     "impossible for an odd order root. So every term exists and the sum stays 1997/2.", "1997/2", 0.95),
    ("\nAlternatively, use the identity for the sum over all roots of unity of 1/(1 + z), "
     "which equals n/2 for odd n. With n = 1997 this is 1997/2.", "1997/2", 0.95),
    ("\nWait, check the small case n = 3: the roots give 1/2 + 1/(1 + w) + 1/(1 + w^2) = 1/2 + 1 = 3/2. "
     "Consistent with n/2, so 1997/2.", "1997/2", 0.95),
    ("\nBut the pairing argument and the identity agree, so nothing else is missing. "
     "The value is 1997/2.", "1997/2", 0.95),
    ("\n</think>\n\nPairing k with 1997 - k gives 998 pairs that each sum to 1, plus the term k = 1997 "
     "equal to 1/2. The answer is \\boxed{\\frac{1997}{2}}.", "1997/2", 0.96),
]


def filler(rng, n_sentences):
    subjects = ["the expression", "the count", "the total", "this quantity", "the remaining term",
                "the product", "each factor", "the difference", "the ratio", "the partial sum"]
    verbs = ["reduces to", "simplifies to", "matches", "is bounded by", "can be written as",
             "equals", "agrees with", "leads to"]
    objects = ["a simpler form", "the earlier value", "an integer", "the same quantity",
               "a shorter expression", "the expected size", "a clean result", "the previous line"]
    out = []
    for _ in range(n_sentences):
        out.append(f"Now {rng.choice(subjects)} {rng.choice(verbs)} {rng.choice(objects)}.")
    return " ".join(out)


MARKERS = ["\nWait, ", "\nBut ", "\nAlternatively, ", "\nLet me think. "]


def build_steps(rng, scripted, final_answer_text):
    """scripted: list of (answer, confidence); the last one is the closing summary step."""
    steps = []
    for i, (answer, conf) in enumerate(scripted):
        if i == len(scripted) - 1:
            text = f"\n</think>\n\n{filler(rng, 1)} The answer is \\boxed{{{final_answer_text}}}."
        else:
            lead = "" if i == 0 else rng.choice(MARKERS)
            text = f"{lead}{filler(rng, rng.randint(2, 4))} So far the answer looks like {answer}."
        steps.append((text, answer, conf))
    return steps


def engineered_set(rng):
    """Twenty items: transient overconfidence, stable convergence, and hard (never stable) cases."""
    items = []

    # Transient: wrong answers, then a confident wrong spike, then the gold answer persists.
    for i in range(8):
        gold = str(rng.randint(10, 999))
        spike = str(int(gold) + rng.choice([-2, -1, 1, 3, 10]))
        pre = [(str(rng.randint(1000, 5000)), round(rng.uniform(0.4, 0.7), 2)) for _ in range(1 + i % 3)]
        spike_c = round(rng.uniform(0.85, 0.93), 2)
        stable = [(gold, round(rng.uniform(0.9, 0.97), 2)) for _ in range(4)]
        trailing = [(gold, round(rng.uniform(0.9, 0.97), 2)) for _ in range(3 + i % 3)]
        scripted = pre + [(spike, spike_c)] + stable + trailing + [(gold, 0.97)]
        items.append((f"transient-{i + 1:02d}", gold, scripted, gold))

    # Stable: the gold answer shows up early and stays, with occasional low-confidence noise.
    for i in range(8):
        gold = str(rng.randint(10, 999))
        scripted = []
        if i % 2 == 1:
            scripted.append((str(rng.randint(1000, 5000)), round(rng.uniform(0.4, 0.7), 2)))
        scripted += [(gold, round(rng.uniform(0.85, 0.96), 2)) for _ in range(2)]
        if i % 4 == 2:
            scripted.append((str(rng.randint(1000, 5000)), round(rng.uniform(0.5, 0.7), 2)))
        scripted += [(gold, round(rng.uniform(0.85, 0.96), 2)) for _ in range(3)]
        scripted += [(gold, round(rng.uniform(0.85, 0.96), 2)) for _ in range(3 + i % 3)]
        scripted.append((gold, 0.97))
        items.append((f"stable-{i + 1:02d}", gold, scripted, gold))

    # Hard: answers wander with low confidence and never stabilize.
    for i in range(4):
        gold = str(rng.randint(10, 999))
        pool = [str(rng.randint(1000, 5000)) for _ in range(3)]
        if i == 3:
            pool[1] = gold  # gold appears mid-trace, but the trace ends elsewhere
        final = gold if i < 2 else pool[2]
        scripted = []
        for s in range(7 + i):
            scripted.append((pool[s % 3], round(rng.uniform(0.3, 0.7), 2)))
        scripted.append((final, round(rng.uniform(0.5, 0.7), 2)))
        items.append((f"hard-{i + 1:02d}", gold, scripted, final))
    return items


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    ap.add_argument("--seed", type=int, default=20260101)
    args = ap.parse_args()
    out = Path(args.out)
    (out / "set").mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)

    write_trace(out / "fig11.jsonl", FIG11_QUESTION, "1997/2", FIG11_STEPS, rng,
                split_words={"Alternatively"})

    stable_early = []
    for i, ans in enumerate(["A", "B", "A", "A", "A", "A", "A"]):
        lead = "" if i == 0 else MARKERS[i % len(MARKERS)]
        stable_early.append((f"{lead}{filler(rng, 2)} Option {ans} fits so far.", ans, 0.9 if ans == "A" else 0.6))
    write_trace(out / "stable_early.jsonl", "Which option is correct? (A) ... (E)", "A", stable_early, rng)

    no_exit = []
    for i, ans in enumerate(["12", "15", "12", "18", "15", "12"]):
        lead = "" if i == 0 else MARKERS[i % len(MARKERS)]
        no_exit.append((f"{lead}{filler(rng, 3)} Perhaps {ans}.", ans, 0.5))
    no_exit[-1] = (no_exit[-1][0] + " Final: \\boxed{12}.", "12", 0.5)
    write_trace(out / "no_exit.jsonl", "A question whose trace never settles.", "12", no_exit, rng)

    lines = []
    for item_id, gold, scripted, final in engineered_set(rng):
        steps = build_steps(rng, scripted, final)
        path = out / "set" / f"{item_id}.jsonl"
        write_trace(path, f"Engineered problem {item_id}.", gold, steps, rng,
                    split_words={"Alternatively"})
        lines.append({"id": item_id, "question": f"Engineered problem {item_id}.", "answer": gold,
                      "replay": f"set/{item_id}.jsonl"})
    (out / "set.jsonl").write_text("".join(json.dumps(l) + "\n" for l in lines), encoding="utf-8")


if __name__ == "__main__":
    main()
