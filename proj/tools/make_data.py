#!/usr/bin/env python3
# Copyright 2026 The mdmoe Authors
# SPDX-License-Identifier: Apache-2.0
"""Generates the synthetic corpora under data/: an arithmetic pretraining
corpus and templated dialogue records for SFT (train + held-out).

Deterministic for a given --seed. Usage: tools/make_data.py [--root DIR]
"""

import argparse
import json
import pathlib
import random

NAMES = ["Anne", "Ben", "Cleo", "Dora", "Emil", "Faye", "Gus", "Hana", "Ivo", "Jude",
         "Kai", "Lena", "Milo", "Nora", "Otto", "Pia", "Quin", "Rosa", "Saul", "Tess",
         "Ugo", "Vera", "Wes", "Xena", "Yuri", "Zoe"]
WORDS = ["apple", "river", "stone", "cloud", "bread", "candle", "garden", "silver",
         "mirror", "forest", "window", "castle", "thunder", "harbor", "lantern", "meadow",
         "crown", "sword", "letter", "winter", "summer", "ocean", "tiger", "violet"]
PLAYS = {
    "Hamlet": "Denmark", "Macbeth": "Scotland", "Othello": "Venice and Cyprus",
    "King Lear": "Britain", "Romeo and Juliet": "Verona", "Julius Caesar": "Rome",
    "Twelfth Night": "Illyria", "A Midsummer Night's Dream": "Athens",
}
COLORS = ["red", "blue", "green", "black", "white", "gold"]


def arithmetic_document(rng, lines=12):
    out = []
    for _ in range(lines):
        a, b = rng.randint(0, 99), rng.randint(0, 99)
        op = rng.choice("+-*")
        if op == "-" and b > a:
            a, b = b, a
        val = {"+": a + b, "-": a - b, "*": a * b}[op]
        out.append(f"{a} {op} {b} = {val}")
    return "\n".join(out)


def turn(rng):
    kind = rng.randrange(7)
    if kind == 0:
        a, b = rng.randint(0, 50), rng.randint(0, 50)
        return f"What is {a} plus {b}?", f"{a} plus {b} is {a + b}."
    if kind == 1:
        w = rng.choice(WORDS)
        return f"Spell {w} backwards.", w[::-1]
    if kind == 2:
        n = rng.choice(NAMES)
        return f"Say hello to {n}.", f"Hello, {n}!"
    if kind == 3:
        play = rng.choice(sorted(PLAYS))
        return f"Where is {play} set?", f"{play} is set in {PLAYS[play]}."
    if kind == 4:
        w = rng.choice(WORDS)
        return f"Repeat after me: {w}", w
    if kind == 5:
        play = rng.choice(sorted(PLAYS))
        return f"Who wrote {play}?", "William Shakespeare."
    c = rng.choice(COLORS)
    n = rng.choice(NAMES)
    return f"What color is {n}'s {rng.choice(WORDS)}?", f"It is {c}."


def record(rng):
    turns = rng.choices([1, 2, 3], weights=[6, 3, 1])[0]
    return {"turns": [dict(zip(("prompt", "response"), turn(rng))) for _ in range(turns)]}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--seed", type=int, default=20260)
    ap.add_argument("--arith-docs", type=int, default=2000)
    ap.add_argument("--sft-train", type=int, default=4000)
    ap.add_argument("--sft-heldout", type=int, default=100)
    args = ap.parse_args()

    root = pathlib.Path(args.root)
    (root / "corpus").mkdir(parents=True, exist_ok=True)
    (root / "sft").mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)

    docs = [arithmetic_document(rng) for _ in range(args.arith_docs)]
    (root / "corpus" / "arithmetic.txt").write_text("\n\n".join(docs) + "\n")

    train = [record(rng) for _ in range(args.sft_train)]
    seen = {json.dumps(r, sort_keys=True) for r in train}
    heldout = []
    while len(heldout) < args.sft_heldout:
        r = record(rng)
        if json.dumps(r, sort_keys=True) not in seen:
            heldout.append(r)
    for name, rows in (("train.jsonl", train), ("heldout.jsonl", heldout)):
        with open(root / "sft" / name, "w") as f:
            for r in rows:
                f.write(json.dumps(r) + "\n")


if __name__ == "__main__":
    main()
