import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sympy import isprime

from engram.hasher import (HashConfigError, NGramConfig, choose_table_sizes, derive_seed,
                           expected_collisions, hash_grams, hash_index, largest_prime_at_most,
                           load_stats, plan_retrieval, plan_stats, suffix_ngram,
                           table_sizes_for_vocab)

GOLDEN = json.loads((Path(__file__).parent / "golden" / "hash_golden.json").read_text())
S = 10_000  # sentinel used in these tests


def cfg(orders=(2, 3), heads=2, sizes=None, seed=0, layer=0):
    n = len(orders) * heads
    return NGramConfig(orders, heads, sizes or (10007, 10009, 7919, 7907, 101, 103)[:n], seed, layer)


def test_suffix_examples():
    assert suffix_ngram([7, 9, 4], 2, 2, S) == (9, 4)
    assert suffix_ngram([7, 9, 4], 0, 3, S) == (S, S, 7)
    with pytest.raises(HashConfigError):
        suffix_ngram([7], 0, 1, S)
    with pytest.raises(IndexError):
        suffix_ngram([7], 1, 2, S)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=20), st.integers(2, 5))
def test_suffix_matches_reslicing(ids, n):
    for t in range(len(ids)):
        padded = [S] * (n - 1) + ids
        assert suffix_ngram(ids, t, n, S) == tuple(padded[t:t + n])


def test_golden_hash_vectors():
    for c in GOLDEN["hash_index"]:
        assert hash_index(c["gram"], c["seed"], c["m"]) == c["index"]
        vec = hash_grams(np.array([c["gram"]], dtype=np.uint64), c["seed"], c["m"])
        assert int(vec[0]) == c["index"]


def test_golden_seeds_and_plan():
    for s in GOLDEN["derive_seed"]:
        assert derive_seed(s["global_seed"], s["order"], s["head"], s["layer"]) == s["seed"]
    p = GOLDEN["plan"]
    c = NGramConfig(tuple(p["orders"]), p["heads"], tuple(p["table_sizes"]), p["global_seed"])
    plan = plan_retrieval(p["ids"], c, p["sentinel"])
    np.testing.assert_array_equal(plan.indices, p["indices"])
    assert plan.indices.tobytes() == np.asarray(p["indices"], dtype=np.int64).tobytes()


def test_seeds_distinct_across_layers():
    a, b = cfg(layer=0), cfg(layer=1)
    assert len(set(a.seeds + b.seeds)) == 2 * a.num_tables


def test_config_validation():
    with pytest.raises(HashConfigError):
        NGramConfig((2,), 1, (10,))  # not prime
    with pytest.raises(HashConfigError):
        NGramConfig((3, 2), 1, (7, 7))
    with pytest.raises(HashConfigError):
        NGramConfig((1,), 1, (7,))
    with pytest.raises(HashConfigError):
        NGramConfig((2,), 2, (7,))
    with pytest.raises(HashConfigError):
        NGramConfig((2,), 2, (7, 11), seeds=(1, 1))


def test_plan_shape_and_slot_order():
    c = NGramConfig((2, 3), 8, (10007,) * 16)
    plan = plan_retrieval([5], c, S)
    assert plan.indices.shape == (1, 16)
    assert plan.table_of == [(n, k) for n in (2, 3) for k in range(8)]
    assert c.slot(3, 2) == 10
    assert plan_retrieval([], c, S).indices.shape == (0, 16)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2 ** 32 - 1), min_size=1, max_size=16), st.integers(0, 2 ** 64 - 1))
def test_plan_matches_per_position_oracle(ids, seed):
    c = cfg(seed=seed)
    plan = plan_retrieval(ids, c, S)
    for t in range(len(ids)):
        for j, (n, k) in enumerate(c.table_of()):
            want = hash_index(suffix_ngram(ids, t, n, S), c.seeds[j], c.table_sizes[j])
            assert plan.indices[t, j] == want


def test_parallel_plan_bitwise_identical():
    ids = np.random.default_rng(0).integers(0, 5000, 1001)
    c = cfg()
    serial = plan_retrieval(ids, c, S).indices
    for w in (2, 3, 7):
        assert plan_retrieval(ids, c, S, workers=w).indices.tobytes() == serial.tobytes()


def test_suffix_locality():
    rng = np.random.default_rng(1)
    ids = rng.integers(0, 100, 30)
    c = cfg()
    base = plan_retrieval(ids, c, S).indices
    for t0 in (0, 7, 29):
        changed = ids.copy()
        changed[t0] += 1
        diff = np.flatnonzero((plan_retrieval(changed, c, S).indices != base).any(axis=1))
        assert set(diff) <= set(range(t0, min(30, t0 + c.max_order)))
        assert t0 in diff  # bigram table has 4 heads' worth of chances; a miss would be a fluke


def test_prefix_rows_shared():
    c = cfg()
    a = plan_retrieval([1, 2, 3, 4, 5], c, S).indices
    b = plan_retrieval([1, 2, 3, 9, 9, 9], c, S).indices
    np.testing.assert_array_equal(a[:3], b[:3])


def test_range_over_many_grams():
    rng = np.random.default_rng(2)
    grams = rng.integers(0, 2 ** 32, size=(200_000, 3), dtype=np.uint64)
    idx = hash_grams(grams, 12345, 10007)
    assert idx.min() >= 0 and idx.max() < 10007


def test_collisions_near_birthday_estimate():
    rng = np.random.default_rng(3)
    grams = np.unique(rng.integers(0, 2 ** 20, size=(10_500, 2)), axis=0)[:10_000]
    assert len(grams) == 10_000
    idx = hash_grams(grams.astype(np.uint64), derive_seed(0, 2, 0), 10007)
    observed = load_stats(idx, 10007)["collisions"]
    expected = expected_collisions(10_000, 10007)
    assert expected / 2 <= observed <= expected * 2


def test_expected_collisions_brute_force():
    # enumerate all 3^3 placements of 3 items into 3 slots
    import itertools
    total = sum(3 - len(set(p)) for p in itertools.product(range(3), repeat=3))
    assert expected_collisions(3, 3) == pytest.approx(total / 27)


@pytest.mark.parametrize("budget, tables, want, realized", [
    (32, 2, 13, 26), (8, 1, 7, 7), (100, 4, 23, 92),
])
def test_choose_table_sizes(budget, tables, want, realized):
    sizes, total = choose_table_sizes(budget, tables)
    assert sizes == [want] * tables and total == realized


def test_choose_table_sizes_oracle():
    for budget in range(4, 400, 7):
        share = budget // 2
        brute = max(p for p in range(2, share + 1) if all(p % q for q in range(2, p)))
        assert choose_table_sizes(budget, 2)[0] == [brute, brute]
    with pytest.raises(HashConfigError):
        choose_table_sizes(3, 2)


def test_vocab_interpretations_for_table_sizes():
    per_table, _ = table_sizes_for_vocab(2_262_400, 16, "per_table")
    per_layer, _ = table_sizes_for_vocab(2_262_400, 16, "per_layer")
    assert isprime(per_table[0]) and per_table[0] <= 2_262_400 and 2_262_400 - per_table[0] < 200
    assert per_layer[0] == largest_prime_at_most(2_262_400 // 16)
    with pytest.raises(HashConfigError):
        table_sizes_for_vocab(10, 2, "other")


def test_plan_stats_shape():
    c = cfg()
    plan = plan_retrieval(np.arange(500), c, S)
    st_ = plan_stats(plan)
    assert set(st_) == {"collision_rate", "chi2", "per_table_load"}
    assert len(st_["per_table_load"]) == c.num_tables
    assert 0 <= st_["collision_rate"] < 1
