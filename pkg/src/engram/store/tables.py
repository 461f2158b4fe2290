from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..hasher import NGramConfig, RetrievalPlan


class StoreError(RuntimeError):
    pass


@dataclass(frozen=True)
class TableId:
    order: int
    head: int
    layer: int = 0


@dataclass
class EmbeddingTable:
    table_id: TableId
    rows: np.ndarray  # [M, d_sub]

    @property
    def size(self) -> int:
        return int(self.rows.shape[0])

    @property
    def d_sub(self) -> int:
        return int(self.rows.shape[1])


@dataclass(frozen=True)
class SparseAdam:
    """Hyperparameters for the lazy row-wise Adam used on embedding rows."""

    lr: float = 4e-4
    lr_multiplier: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.weight_decay != 0.0:
            raise ValueError("embedding rows are trained without weight decay; got "
                             f"weight_decay={self.weight_decay}")
        if self.lr <= 0 or self.lr_multiplier <= 0:
            raise ValueError("learning rate and multiplier must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    @property
    def effective_lr(self) -> float:
        return self.lr * self.lr_multiplier


class _Shard:
    """A contiguous row range of one table plus its lazily allocated Adam state."""

    def __init__(self, lo: int, rows: np.ndarray):
        self.lo = lo
        self.rows = rows
        self.slot_of = np.full(rows.shape[0], -1, dtype=np.int64)
        self.m = np.zeros((0, rows.shape[1]), dtype=rows.dtype)
        self.v = np.zeros((0, rows.shape[1]), dtype=rows.dtype)
        self.step = np.zeros(0, dtype=np.int64)
        self.pending_rows: list[np.ndarray] = []
        self.pending_grads: list[np.ndarray] = []

    @property
    def state_rows(self) -> int:
        return int(self.step.size)

    def stage(self, local_rows: np.ndarray, grads: np.ndarray) -> None:
        self.pending_rows.append(local_rows)
        self.pending_grads.append(grads)

    def staged(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.pending_rows:
            return np.zeros(0, dtype=np.int64), np.zeros((0, self.rows.shape[1]), self.rows.dtype)
        rows = np.concatenate(self.pending_rows)
        grads = np.concatenate(self.pending_grads)
        uniq, inv = np.unique(rows, return_inverse=True)
        acc = np.zeros((uniq.size, grads.shape[1]), dtype=self.rows.dtype)
        np.add.at(acc, inv, grads)  # sequential, fixed order
        return uniq, acc

    def _ensure_state(self, rows: np.ndarray) -> np.ndarray:
        new = rows[self.slot_of[rows] < 0]
        if new.size:
            start = self.step.size
            self.slot_of[new] = np.arange(start, start + new.size)
            pad = np.zeros((new.size, self.rows.shape[1]), dtype=self.rows.dtype)
            self.m = np.concatenate([self.m, pad])
            self.v = np.concatenate([self.v, pad])
            self.step = np.concatenate([self.step, np.zeros(new.size, dtype=np.int64)])
        return self.slot_of[rows]

    def adam(self, opt: SparseAdam) -> int:
        rows, g = self.staged()
        self.pending_rows.clear()
        self.pending_grads.clear()
        if rows.size == 0:
            return 0
        slots = self._ensure_state(rows)
        self.step[slots] += 1
        t = self.step[slots][:, None]
        m = opt.beta1 * self.m[slots] + (1 - opt.beta1) * g
        v = opt.beta2 * self.v[slots] + (1 - opt.beta2) * g * g
        self.m[slots] = m
        self.v[slots] = v
        m_hat = m / (1 - opt.beta1 ** t)
        v_hat = v / (1 - opt.beta2 ** t)
        self.rows[rows] -= (opt.effective_lr * m_hat / (np.sqrt(v_hat) + opt.eps)).astype(self.rows.dtype)
        return int(rows.size)


class ShardedStore:
    """All hashed tables of one Engram layer, each split into contiguous row shards."""

    def __init__(self, tables: list[EmbeddingTable], num_shards: int = 1):
        if not tables:
            raise StoreError("store needs at least one table")
        d_sub = {t.d_sub for t in tables}
        if len(d_sub) != 1:
            raise StoreError(f"all tables must share d_sub, got {sorted(d_sub)}")
        if num_shards < 1:
            raise StoreError("num_shards must be >= 1")
        self.d_sub = d_sub.pop()
        self.ids = [t.table_id for t in tables]
        self.sizes = [t.size for t in tables]
        self.dtype = tables[0].rows.dtype
        self.num_shards = num_shards
        self.bounds: list[np.ndarray] = []
        self.shards: list[list[_Shard]] = []
        for t in tables:
            if not np.all(np.isfinite(t.rows)):
                raise StoreError(f"table {t.table_id} holds non-finite values")
            edges = np.linspace(0, t.size, num_shards + 1).round().astype(np.int64)
            self.bounds.append(edges)
            self.shards.append([_Shard(int(lo), np.array(t.rows[lo:hi], copy=True))
                                for lo, hi in zip(edges[:-1], edges[1:])])

    @classmethod
    def create(cls, cfg: NGramConfig, d_sub: int, *, init_std: float = 0.0, seed: int = 0,
               num_shards: int = 1, dtype=np.float32) -> "ShardedStore":
        rng = np.random.default_rng(seed)
        tables = []
        for (n, k), m in zip(cfg.table_of(), cfg.table_sizes):
            rows = (rng.normal(0.0, init_std, size=(m, d_sub)) if init_std > 0
                    else np.zeros((m, d_sub))).astype(dtype)
            tables.append(EmbeddingTable(TableId(n, k, cfg.layer), rows))
        return cls(tables, num_shards)

    @property
    def num_tables(self) -> int:
        return len(self.ids)

    @property
    def d_mem(self) -> int:
        return self.d_sub * self.num_tables

    def shard_of(self, table: int, rows) -> np.ndarray:
        return np.searchsorted(self.bounds[table], np.asarray(rows), side="right") - 1

    def tables(self) -> list[EmbeddingTable]:
        return [EmbeddingTable(tid, np.concatenate([s.rows for s in shards]))
                for tid, shards in zip(self.ids, self.shards)]

    def resharded(self, num_shards: int) -> "ShardedStore":
        return ShardedStore(self.tables(), num_shards)

    def _check_plan(self, plan: RetrievalPlan) -> None:
        if plan.indices.shape[1] != self.num_tables:
            raise StoreError(f"plan has {plan.indices.shape[1]} slots, store has {self.num_tables} tables")
        if plan.indices.size:
            if plan.indices.min() < 0:
                raise StoreError("negative row index in plan")
            over = plan.indices.max(axis=0) >= np.asarray(self.sizes)
            if over.any():
                raise StoreError(f"plan index exceeds table size for slots {np.flatnonzero(over).tolist()}")

    def _split(self, j: int, idx: np.ndarray):
        owner = self.shard_of(j, idx)
        for s, shard in enumerate(self.shards[j]):
            mask = owner == s
            if mask.any():
                yield shard, mask, idx[mask] - shard.lo

    def gather(self, plan: RetrievalPlan) -> np.ndarray:
        self._check_plan(plan)
        T = plan.num_positions
        out = np.empty((T, self.d_mem), dtype=self.dtype)
        for j in range(self.num_tables):
            block = out[:, j * self.d_sub:(j + 1) * self.d_sub]
            for shard, mask, local in self._split(j, plan.indices[:, j]):
                block[mask] = shard.rows[local]
        return out

    def scatter_add(self, plan: RetrievalPlan, grad_e) -> None:
        """Stage gradients; duplicates accumulate in position order."""
        self._check_plan(plan)
        grad_e = np.asarray(grad_e)
        if grad_e.shape != (plan.num_positions, self.d_mem):
            raise StoreError(f"grad shape {grad_e.shape} != {(plan.num_positions, self.d_mem)}")
        for j in range(self.num_tables):
            block = grad_e[:, j * self.d_sub:(j + 1) * self.d_sub].astype(self.dtype)
            for shard, mask, local in self._split(j, plan.indices[:, j]):
                shard.stage(local, block[mask])

    def staged_gradients(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(global rows, summed grads) per table, without consuming them."""
        out = []
        for shards in self.shards:
            rows, grads = [], []
            for shard in shards:
                r, g = shard.staged()
                rows.append(r + shard.lo)
                grads.append(g)
            out.append((np.concatenate(rows), np.concatenate(grads)))
        return out

    def dense_gradients(self) -> list[np.ndarray]:
        dense = []
        for (rows, grads), m in zip(self.staged_gradients(), self.sizes):
            g = np.zeros((m, self.d_sub), dtype=self.dtype)
            g[rows] = grads
            dense.append(g)
        return dense

    def zero_grad(self) -> None:
        for shards in self.shards:
            for shard in shards:
                shard.pending_rows.clear()
                shard.pending_grads.clear()

    def sparse_adam_step(self, opt: SparseAdam) -> int:
        """Apply lazy Adam to every staged row; returns the number of rows touched."""
        touched = 0
        for shards in self.shards:
            for shard in shards:
                touched += shard.adam(opt)
        return touched

    def optimizer_state_rows(self) -> int:
        return sum(s.state_rows for shards in self.shards for s in shards)

