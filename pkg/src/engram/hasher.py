"""Suffix N-gram extraction and deterministic multi-head hashing.

Every arithmetic step is fixed-width unsigned 64-bit, so indices are identical
across platforms and processes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sympy import isprime, prevprime

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1


class HashConfigError(ValueError):
    pass


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(global_seed: int, order: int, head: int, layer: int = 0) -> int:
    return splitmix64((global_seed + ((layer << 16) | (order << 8) | head)) & MASK64)


@dataclass(frozen=True)
class NGramConfig:
    orders: tuple[int, ...]
    heads: int
    table_sizes: tuple[int, ...]
    global_seed: int = 0
    layer: int = 0
    seeds: tuple[int, ...] = field(default=())

    def __post_init__(self):
        orders = tuple(int(n) for n in self.orders)
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "table_sizes", tuple(int(m) for m in self.table_sizes))
        if not self.seeds:
            object.__setattr__(self, "seeds", tuple(
                derive_seed(self.global_seed, n, k, self.layer)
                for n in orders for k in range(self.heads)))
        self.validate()

    def validate(self) -> None:
        if not self.orders:
            raise HashConfigError("at least one N-gram order is required")
        if any(n < 2 for n in self.orders):
            raise HashConfigError(f"N-gram orders must be >= 2, got {self.orders}")
        if list(self.orders) != sorted(set(self.orders)):
            raise HashConfigError("orders must be strictly ascending")
        if self.heads < 1:
            raise HashConfigError("heads must be >= 1")
        if len(self.table_sizes) != self.num_tables:
            raise HashConfigError(f"need {self.num_tables} table sizes, got {len(self.table_sizes)}")
        bad = [m for m in self.table_sizes if not isprime(m)]
        if bad:
            raise HashConfigError(f"table sizes must be prime: {bad}")
        if len(self.seeds) != self.num_tables or len(set(self.seeds)) != len(self.seeds):
            raise HashConfigError("seeds must be pairwise distinct, one per table")

    @property
    def num_tables(self) -> int:
        return len(self.orders) * self.heads

    @property
    def max_order(self) -> int:
        return self.orders[-1]

    def table_of(self) -> list[tuple[int, int]]:
        """(order, head) for each slot, in slot order."""
        return [(n, k) for n in self.orders for k in range(self.heads)]

    def slot(self, order: int, head: int) -> int:
        return self.orders.index(order) * self.heads + head

    def for_layer(self, layer: int) -> "NGramConfig":
        return NGramConfig(self.orders, self.heads, self.table_sizes, self.global_seed, layer)

    @classmethod
    def from_budget(cls, orders, heads, budget, global_seed=0, layer=0) -> "NGramConfig":
        sizes, _ = choose_table_sizes(budget, len(orders) * heads)
        return cls(tuple(orders), heads, tuple(sizes), global_seed, layer)


@dataclass
class RetrievalPlan:
    indices: np.ndarray  # [T, num_tables] int64
    table_of: list[tuple[int, int]]
    table_sizes: tuple[int, ...]
    layer: int = 0

    @property
    def num_positions(self) -> int:
        return int(self.indices.shape[0])


def suffix_ngram(canonical_ids, t: int, n: int, sentinel: int) -> tuple[int, ...]:
    if n < 2:
        raise HashConfigError(f"N-gram order must be >= 2, got {n}")
    if not 0 <= t < len(canonical_ids):
        raise IndexError(f"position {t} outside sequence of length {len(canonical_ids)}")
    return tuple(int(canonical_ids[i]) if i >= 0 else sentinel for i in range(t - n + 1, t + 1))


def hash_index(gram, seed: int, m: int) -> int:
    """Scalar reference form of the multiplicative-XOR hash."""
    z = seed & MASK64
    for c in gram:
        z = ((z ^ (int(c) + 1)) * GOLDEN) & MASK64
    z ^= z >> 32
    return z % m


def hash_grams(grams: np.ndarray, seed: int, m: int) -> np.ndarray:
    """Vectorized hash_index over the rows of a [P, n] array of canonical IDs."""
    grams = np.asarray(grams, dtype=np.uint64)
    z = np.full(grams.shape[0], seed & MASK64, dtype=np.uint64)
    mult = np.uint64(GOLDEN)
    one = np.uint64(1)
    for j in range(grams.shape[1]):
        z = (z ^ (grams[:, j] + one)) * mult
    z ^= z >> np.uint64(32)
    return (z % np.uint64(m)).astype(np.int64)


def _suffix_matrix(ids: np.ndarray, n: int, sentinel: int) -> np.ndarray:
    padded = np.concatenate([np.full(n - 1, sentinel, dtype=np.uint64), ids.astype(np.uint64)])
    return np.lib.stride_tricks.sliding_window_view(padded, n)


def plan_retrieval(canonical_ids, cfg: NGramConfig, sentinel: int, workers: int = 1) -> RetrievalPlan:
    ids = np.asarray(canonical_ids, dtype=np.int64).reshape(-1)
    T = ids.size
    if workers > 1 and T > 1:
        # each chunk carries max_order-1 tokens of left context so rows match the serial plan
        bounds = np.linspace(0, T, workers + 1).astype(int)
        ctx = cfg.max_order - 1

        def chunk(i):
            lo, hi = bounds[i], bounds[i + 1]
            start = max(0, lo - ctx)
            sub = _plan_indices(ids[start:hi], cfg, sentinel)
            return sub[lo - start:]

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk, range(workers)))
        indices = np.concatenate(parts, axis=0)
    else:
        indices = _plan_indices(ids, cfg, sentinel)
    return RetrievalPlan(indices, cfg.table_of(), cfg.table_sizes, cfg.layer)


def _plan_indices(ids: np.ndarray, cfg: NGramConfig, sentinel: int) -> np.ndarray:
    out = np.empty((ids.size, cfg.num_tables), dtype=np.int64)
    if ids.size == 0:
        return out
    slot = 0
    for n in cfg.orders:
        grams = _suffix_matrix(ids, n, sentinel)
        for _ in range(cfg.heads):
            out[:, slot] = hash_grams(grams, cfg.seeds[slot], cfg.table_sizes[slot])
            slot += 1
    return out


def largest_prime_at_most(x: int) -> int:
    if x < 2:
        raise HashConfigError(f"no prime <= {x}")
    return x if isprime(x) else int(prevprime(x))


def choose_table_sizes(budget: int, num_tables: int) -> tuple[list[int], int]:
    """Split a slot budget equally; each table takes the largest prime <= its share."""
    if num_tables < 1:
        raise HashConfigError("need at least one table")
    share = int(budget) // num_tables
    if share < 2:
        raise HashConfigError(f"budget {budget} too small for {num_tables} tables")
    m = largest_prime_at_most(share)
    sizes = [m] * num_tables
    return sizes, sum(sizes)


def table_sizes_for_vocab(vocab_size: int, num_tables: int, interpretation: str = "per_table"):
    """Table sizes under the two readings of a published 'vocab size'.

    per_table: every (order, head) table holds about `vocab_size` slots.
    per_layer: `vocab_size` slots are split across all tables of the layer.
    """
    if interpretation == "per_table":
        return choose_table_sizes(vocab_size * num_tables, num_tables)
    if interpretation == "per_layer":
        return choose_table_sizes(vocab_size, num_tables)
    raise HashConfigError(f"unknown interpretation {interpretation!r}")


def expected_collisions(num_items: int, m: int) -> float:
    """Expected items landing on an already-occupied slot (P minus expected distinct slots)."""
    distinct = m * (1.0 - (1.0 - 1.0 / m) ** num_items)
    return num_items - distinct


def load_stats(indices: np.ndarray, m: int) -> dict:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    counts = np.bincount(idx, minlength=m)
    n = idx.size
    expected = n / m
    chi2 = float(((counts - expected) ** 2).sum() / expected) if n else 0.0
    distinct = int(np.count_nonzero(counts))
    return {
        "size": m,
        "count": n,
        "distinct_slots": distinct,
        "collisions": n - distinct,
        "collision_rate": (n - distinct) / n if n else 0.0,
        "expected_collisions": expected_collisions(n, m),
        "chi2": chi2,
        "chi2_pvalue": float(stats.chi2.sf(chi2, m - 1)) if n else 1.0,
        "max_load": int(counts.max()) if n else 0,
    }


def plan_stats(plan: RetrievalPlan) -> dict:
    per_table = []
    for j, (n, k) in enumerate(plan.table_of):
        s = load_stats(plan.indices[:, j], plan.table_sizes[j])
        s.update(order=n, head=k)
        per_table.append(s)
    total = sum(s["count"] for s in per_table)
    coll = sum(s["collisions"] for s in per_table)
    return {
        "collision_rate": coll / total if total else 0.0,
        "chi2": sum(s["chi2"] for s in per_table),
        "per_table_load": per_table,
    }
