import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from engram.formats import read_tables, write_tables
from engram.hasher import NGramConfig, RetrievalPlan, plan_retrieval
from engram.store import EmbeddingTable, ShardedStore, SparseAdam, StoreError, TableId

CFG = NGramConfig((2, 3), 2, (13, 11, 7, 5))


def random_store(rng, cfg=CFG, d_sub=3, shards=1):
    tables = [EmbeddingTable(TableId(n, k), rng.normal(size=(m, d_sub)))
              for (n, k), m in zip(cfg.table_of(), cfg.table_sizes)]
    return ShardedStore(tables, shards)


def random_plan(rng, cfg=CFG, T=9):
    idx = np.stack([rng.integers(0, m, T) for m in cfg.table_sizes], axis=1)
    return RetrievalPlan(idx, cfg.table_of(), cfg.table_sizes)


def gather_oracle(tables, plan):
    """Per-position, per-slot loop."""
    rows = []
    for t in range(plan.num_positions):
        rows.append(np.concatenate([tables[j].rows[plan.indices[t, j]] for j in range(len(tables))]))
    return np.array(rows)


def scatter_oracle(tables, plan, g):
    """Dense Jacobian: G[t*d_mem + j*d_sub + c, offset_j + row*d_sub + c] = 1, then G^T g."""
    d_sub = tables[0].d_sub
    sizes = [t.size for t in tables]
    offsets = np.concatenate([[0], np.cumsum(sizes)]) * d_sub
    T, d_mem = g.shape
    J = np.zeros((T * d_mem, offsets[-1]))
    for t in range(T):
        for j in range(len(tables)):
            for c in range(d_sub):
                J[t * d_mem + j * d_sub + c, offsets[j] + plan.indices[t, j] * d_sub + c] = 1.0
    flat = J.T @ g.reshape(-1)
    return [flat[offsets[j]:offsets[j + 1]].reshape(sizes[j], d_sub) for j in range(len(tables))]


def test_gather_matches_oracle():
    rng = np.random.default_rng(0)
    for shards in (1, 2, 4):
        store = random_store(np.random.default_rng(1), shards=shards)
        plan = random_plan(rng)
        np.testing.assert_array_equal(store.gather(plan), gather_oracle(store.tables(), plan))


def test_gather_zero_and_one_hot():
    cfg = NGramConfig((2,), 2, (11, 13))
    store = ShardedStore.create(cfg, 4)
    plan = plan_retrieval(np.arange(50), cfg, 99)
    assert not store.gather(plan).any()
    tables = store.tables()
    tables[0].rows[5] = [1, 0, 0, 0]
    store = ShardedStore(tables, 2)
    e = store.gather(plan)
    hit = plan.indices[:, 0] == 5
    assert hit.any()
    np.testing.assert_array_equal(e[hit, :4], np.tile([1, 0, 0, 0], (hit.sum(), 1)))
    assert not e[~hit].any() and not e[:, 4:].any()


def test_scatter_matches_dense_jacobian():
    cfg = NGramConfig((2,), 1, (3,))
    rng = np.random.default_rng(2)
    for _ in range(5):
        store = ShardedStore.create(cfg, 2, dtype=np.float64)
        plan = RetrievalPlan(rng.integers(0, 3, (6, 1)), cfg.table_of(), cfg.table_sizes)
        g = rng.normal(size=(6, 2))
        store.scatter_add(plan, g)
        want = scatter_oracle(store.tables(), plan, g)
        np.testing.assert_allclose(store.dense_gradients()[0], want[0], rtol=0, atol=1e-15)


def test_duplicates_accumulate():
    cfg = NGramConfig((2,), 1, (5,))
    store = ShardedStore.create(cfg, 2, dtype=np.float64)
    plan = RetrievalPlan(np.array([[3], [3]]), cfg.table_of(), cfg.table_sizes)
    store.scatter_add(plan, np.array([[1.0, 2.0], [10.0, 20.0]]))
    rows, grads = store.staged_gradients()[0]
    assert rows.tolist() == [3]
    np.testing.assert_array_equal(grads, [[11.0, 22.0]])


def test_adjointness_and_shard_transparency():
    rng = np.random.default_rng(3)
    for _ in range(100):
        T = int(rng.integers(1, 12))
        plan = random_plan(rng, T=T)
        u = random_store(rng)
        v = rng.normal(size=(T, u.d_mem))
        lhs = float(np.sum(u.gather(plan) * v))
        results = []
        for s in (1, 2, 4):
            st_ = ShardedStore.create(CFG, 3, dtype=np.float64, num_shards=s)
            st_.scatter_add(plan, v)
            results.append(st_.dense_gradients())
        rhs = sum(float(np.sum(t.rows * g)) for t, g in zip(u.tables(), results[0]))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
        for other in results[1:]:
            for a, b in zip(results[0], other):
                assert a.tobytes() == b.tobytes()


def test_sharded_adam_bit_identical():
    rng = np.random.default_rng(4)
    base = random_store(rng)
    stores = [base.resharded(s) for s in (1, 2, 4)]
    opt = SparseAdam(lr=1e-3)
    for _ in range(5):
        plan = random_plan(rng, T=7)
        g = rng.normal(size=(7, base.d_mem))
        for s in stores:
            s.scatter_add(plan, g)
            s.sparse_adam_step(opt)
    ref = stores[0].tables()
    for s in stores[1:]:
        for a, b in zip(ref, s.tables()):
            assert a.rows.tobytes() == b.rows.tobytes()


def test_shards_partition_rows():
    store = random_store(np.random.default_rng(5), shards=4)
    for j, m in enumerate(store.sizes):
        owners = store.shard_of(j, np.arange(m))
        assert owners.min() == 0 and owners.max() <= 3
        assert np.all(np.diff(owners) >= 0)
        assert sum(s.rows.shape[0] for s in store.shards[j]) == m


def test_first_adam_step_is_lr_times_five():
    cfg = NGramConfig((2,), 1, (7,))
    store = ShardedStore.create(cfg, 4, dtype=np.float64)
    plan = RetrievalPlan(np.array([[2]]), cfg.table_of(), cfg.table_sizes)
    store.scatter_add(plan, np.ones((1, 4)))
    touched = store.sparse_adam_step(SparseAdam(lr=1e-3))
    rows = store.tables()[0].rows
    assert touched == 1
    np.testing.assert_allclose(rows[2], -5e-3, rtol=1e-6)
    assert not np.delete(rows, 2, axis=0).any()


def test_lazy_state_and_untouched_rows():
    cfg = NGramConfig((2,), 1, (11,))
    store = ShardedStore.create(cfg, 2, init_std=1.0, seed=1, dtype=np.float64, num_shards=2)
    before = store.tables()[0].rows.copy()
    plan = RetrievalPlan(np.array([[1], [9]]), cfg.table_of(), cfg.table_sizes)
    store.scatter_add(plan, np.ones((2, 2)))
    store.sparse_adam_step(SparseAdam())
    assert store.optimizer_state_rows() == 2
    after = store.tables()[0].rows
    keep = [i for i in range(11) if i not in (1, 9)]
    assert after[keep].tobytes() == before[keep].tobytes()


def test_zero_grad_fresh_state_does_not_move():
    cfg = NGramConfig((2,), 1, (5,))
    store = ShardedStore.create(cfg, 2, init_std=1.0, seed=2, dtype=np.float64)
    before = store.tables()[0].rows.copy()
    plan = RetrievalPlan(np.array([[4]]), cfg.table_of(), cfg.table_sizes)
    store.scatter_add(plan, np.zeros((1, 2)))
    store.sparse_adam_step(SparseAdam())
    np.testing.assert_array_equal(store.tables()[0].rows, before)


def test_weight_decay_rejected():
    with pytest.raises(ValueError):
        SparseAdam(weight_decay=0.1)
    assert SparseAdam(lr=2e-4).effective_lr == pytest.approx(1e-3)


def test_plan_mismatch_errors():
    store = random_store(np.random.default_rng(6))
    bad = RetrievalPlan(np.array([[13, 0, 0, 0]]), CFG.table_of(), CFG.table_sizes)
    with pytest.raises(StoreError):
        store.gather(bad)
    with pytest.raises(StoreError):
        store.gather(RetrievalPlan(np.zeros((1, 3), dtype=np.int64), [], ()))
    with pytest.raises(StoreError):
        store.scatter_add(random_plan(np.random.default_rng(0), T=2), np.zeros((3, store.d_mem)))


def test_non_finite_rows_rejected():
    rows = np.zeros((3, 2))
    rows[1, 0] = np.nan
    with pytest.raises(StoreError):
        ShardedStore([EmbeddingTable(TableId(2, 0), rows)])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 31))
def test_scatter_order_independent(shards, seed):
    rng = np.random.default_rng(seed)
    plan = random_plan(rng, T=10)
    g = rng.integers(-8, 8, size=(10, 12)).astype(np.float64)  # exact in any order
    perm = rng.permutation(10)
    a = ShardedStore.create(CFG, 3, dtype=np.float64, num_shards=shards)
    b = ShardedStore.create(CFG, 3, dtype=np.float64, num_shards=shards)
    a.scatter_add(plan, g)
    b.scatter_add(RetrievalPlan(plan.indices[perm], plan.table_of, plan.table_sizes), g[perm])
    for x, y in zip(a.dense_gradients(), b.dense_gradients()):
        np.testing.assert_array_equal(x, y)


def test_table_file_round_trip(tmp_path):
    store = ShardedStore.create(CFG.for_layer(3), 4, init_std=0.5, seed=7)
    write_tables(tmp_path / "t.egtb", store.tables())
    back = read_tables(tmp_path / "t.egtb")
    for a, b in zip(store.tables(), back):
        assert a.table_id == b.table_id
        assert a.rows.tobytes() == b.rows.tobytes()
