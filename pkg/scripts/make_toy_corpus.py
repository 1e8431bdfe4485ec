"""Write the synthetic 100-sentence corpus used by the overfitting checks.

Words come from a fixed random lexicon over 30 CJK characters, so characters
are shared between words and the tagging is not a per-character lookup.

Usage: python scripts/make_toy_corpus.py [--out tests/data/toy100.utf8] [--n 100] [--seed 2016]
"""

import argparse
import random

ALPHABET = "的一是在不了有和人这中大为上个国我以要他时来用们生到作地于出就分对成会可"[:30]


def toy_corpus(n=100, seed=2016):
    rnd = random.Random(seed)
    lexicon = set()
    while len(lexicon) < 60:
        k = rnd.choice([1, 1, 2, 2, 2, 3, 4])
        lexicon.add("".join(rnd.choice(ALPHABET) for _ in range(k)))
    lexicon = sorted(lexicon)
    seen, sentences = set(), []
    while len(sentences) < n:
        words = [rnd.choice(lexicon) for _ in range(rnd.randint(4, 9))]
        text = "".join(words)
        if text not in seen:
            seen.add(text)
            sentences.append(words)
    return sentences


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="tests/data/toy100.utf8")
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--seed", type=int, default=2016)
    args = ap.parse_args()
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for words in toy_corpus(args.n, args.seed):
            fh.write(" ".join(words) + "\n")
