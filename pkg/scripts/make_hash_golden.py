"""Freeze golden hash vectors from a standalone pure-Python reference.

Nothing here imports the package: the mixing and seed derivation are spelled
out with Python integers so the frozen file checks the vectorized code.

    python3 scripts/make_hash_golden.py tests/golden/hash_golden.json
"""

import json
import random
import sys

MASK = (1 << 64) - 1
MULT = 0x9E3779B97F4A7C15


def splitmix64(x):
    z = (x + MULT) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def mix(gram, seed, m):
    z = seed
    for c in gram:
        z = ((z ^ (c + 1)) * MULT) & MASK
    z ^= z >> 32
    return z % m


def main(path):
    rng = random.Random(7)
    cases = []
    for m in (2, 7, 13, 10007, 2262383, 4294967291):
        for _ in range(6):
            n = rng.choice((1, 2, 3, 4))
            gram = [rng.randrange(0, 1 << 32) for _ in range(n)]
            seed = rng.randrange(0, 1 << 64)
            cases.append({"gram": gram, "seed": seed, "m": m, "index": mix(gram, seed, m)})
    seeds = []
    for g, layer, n, k in [(0, 0, 2, 0), (0, 0, 3, 7), (42, 2, 2, 3), (42, 15, 3, 7), (MASK, 1, 2, 0)]:
        seeds.append({"global_seed": g, "layer": layer, "order": n, "head": k,
                      "seed": splitmix64((g + ((layer << 16) | (n << 8) | k)) & MASK)})

    # a whole plan: orders (2, 3), 2 heads, sentinel padding at the start
    ids = [rng.randrange(0, 1000) for _ in range(12)]
    sentinel, sizes = 1000, [10007, 10009, 7919, 7907]
    table_of = [(2, 0), (2, 1), (3, 0), (3, 1)]
    plan = []
    for t in range(len(ids)):
        row = []
        for (n, k), m in zip(table_of, sizes):
            gram = [ids[i] if i >= 0 else sentinel for i in range(t - n + 1, t + 1)]
            seed = splitmix64((n << 8 | k) & MASK)
            row.append(mix(gram, seed, m))
        plan.append(row)
    doc = {"hash_index": cases, "derive_seed": seeds,
           "plan": {"ids": ids, "sentinel": sentinel, "orders": [2, 3], "heads": 2,
                    "table_sizes": sizes, "global_seed": 0, "indices": plan}}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/golden/hash_golden.json")
