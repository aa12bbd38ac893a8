"""Regenerate tlsh_reference.tsv with the C reference implementation (py-tlsh).

Not run by the test suite; the output is committed.
"""
import random
from pathlib import Path

import tlsh

HEX = "0123456789ABCDEF"


def random_digest(rng):
    return "".join(rng.choice(HEX) for _ in range(70))


def mutate(rng, digest):
    chars = list(digest)
    for _ in range(rng.choice([1, 1, 2, 3, 5, 10, 30])):
        pos = rng.randrange(70)
        chars[pos] = rng.choice(HEX)
    return "".join(chars)


def main():
    rng = random.Random(20211219)
    rows = []
    while len(rows) < 1000:
        a = random_digest(rng)
        b = random_digest(rng) if rng.random() < 0.3 else mutate(rng, a)
        if rng.random() < 0.5:
            a = "T1" + a
        if rng.random() < 0.5:
            b = "T1" + b
        ref_a = a if a.startswith("T1") else "T1" + a
        ref_b = b if b.startswith("T1") else "T1" + b
        rows.append((a, b, tlsh.diff(ref_a, ref_b)))
    out = Path(__file__).with_name("tlsh_reference.tsv")
    with out.open("w") as fh:
        for a, b, d in rows:
            fh.write(f"{a}\t{b}\t{d}\n")


if __name__ == "__main__":
    main()
