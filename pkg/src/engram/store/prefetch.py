"""Prefetch-and-overlap scheduling for Engram layers on a virtual clock.

Retrieval indices depend only on tokens, so every Engram layer's rows can be
requested at the start of a step. Each layer's fetch runs on its own
asynchronous stream and must land before the block that hosts the layer
starts; any shortfall stalls the compute stream.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..hasher import RetrievalPlan
from .cache import HotTier, cache_admit_evict
from .tables import ShardedStore, StoreError

# PCIe 4.0 x16 moves ~25 GB/s; an 80-dim f32 row is 320 B -> ~0.013 us.
DEFAULT_PER_ROW_US = 0.0128
DEFAULT_PER_BATCH_US = 10.0


@dataclass
class TierConfig:
    hot_capacity_rows: int = 0
    per_row_us: float = DEFAULT_PER_ROW_US
    per_batch_us: float = DEFAULT_PER_BATCH_US
    compute_window_us: float = 0.0
    window_steps: int = 64
    sketch_width: int = 1 << 16
    sketch_depth: int = 4

    def __post_init__(self):
        if self.hot_capacity_rows < 0 or self.per_row_us < 0 or self.per_batch_us < 0:
            raise ValueError("tier capacities and latency costs must be non-negative")
        if self.compute_window_us < 0:
            raise ValueError("compute window must be non-negative")

    def fetch_latency(self, rows: int) -> float:
        """Affine and nondecreasing in the row count; nothing to move costs nothing."""
        return 0.0 if rows <= 0 else self.per_batch_us + self.per_row_us * rows

    def rows_for_latency(self, latency_us: float) -> int:
        if self.per_row_us <= 0:
            raise ValueError("per_row_us must be positive to invert the latency model")
        return max(0, int((latency_us - self.per_batch_us) // self.per_row_us))

    def new_tier(self, seed: int = 0) -> HotTier:
        return HotTier(self.hot_capacity_rows, self.window_steps, self.sketch_width,
                       self.sketch_depth, seed)

    @classmethod
    def from_dict(cls, d: dict) -> "TierConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass
class StepReport:
    stall_us: float
    compute_us: float
    fetch_us: dict
    rows_fetched: int
    bytes_fetched: int
    accesses: int
    hot_hits: int


@dataclass
class OverlapReport:
    stall_time: float
    total_compute: float
    bytes_fetched: int
    bytes_fetched_after_warmup: int
    hot_hit_rate: float
    hot_hit_rate_after_warmup: float
    throughput_penalty: float
    steps: list[StepReport] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def trace_for_window(placements, n_blocks: int, window_us: float) -> list[float]:
    """Uniform per-block compute so the first Engram layer starts at `window_us`."""
    first = min(placements)
    if first < 1:
        raise ValueError("an Engram layer at depth 0 has no compute window to hide behind")
    return [window_us / first] * n_blocks


def _key_offsets(stores: dict[int, ShardedStore]) -> dict[int, np.ndarray]:
    offsets, base = {}, 0
    for depth in sorted(stores):
        sizes = np.asarray(stores[depth].sizes, dtype=np.int64)
        offsets[depth] = base + np.concatenate([[0], np.cumsum(sizes)[:-1]])
        base += int(sizes.sum())
    return offsets


def prefetch_execute(stores: dict[int, ShardedStore], steps, tiers: TierConfig,
                     compute_trace, *, warmup_steps: int = 1, seed: int = 0) -> OverlapReport:
    """Simulate `steps` decoding steps; each step maps Engram depth -> RetrievalPlan."""
    if isinstance(steps, dict):
        steps = [steps]
    trace = np.asarray(compute_trace, dtype=float)
    if trace.ndim != 1 or (trace < 0).any():
        raise ValueError("compute_trace must be a 1-D list of non-negative block durations")
    starts = np.concatenate([[0.0], np.cumsum(trace)[:-1]])
    for depth in stores:
        if not 0 <= depth < trace.size:
            raise ValueError(f"Engram depth {depth} outside compute trace of {trace.size} blocks")
    offsets = _key_offsets(stores)
    tier = tiers.new_tier(seed)

    reports = []
    for plans in steps:
        if set(plans) != set(stores):
            raise StoreError(f"step plans cover depths {sorted(plans)}, stores cover {sorted(stores)}")
        ready, all_keys = {}, []
        hits = accesses = rows_fetched = 0
        for depth in sorted(plans):
            plan: RetrievalPlan = plans[depth]
            store = stores[depth]
            store._check_plan(plan)
            keys = (plan.indices + offsets[depth][None, :]).reshape(-1)
            all_keys.append(keys)
            hot = tier.contains(keys)
            hits += int(hot.sum())
            accesses += keys.size
            missing = np.unique(keys[~hot]).size
            rows_fetched += missing
            ready[depth] = tiers.fetch_latency(missing)

        clock = stall = 0.0
        for b, dur in enumerate(trace):
            if b in ready and ready[b] > clock:
                stall += ready[b] - clock
                clock = ready[b]
            clock += dur
        d_sub = next(iter(stores.values())).d_sub
        itemsize = np.dtype(np.float32).itemsize
        reports.append(StepReport(stall, float(trace.sum()), {int(k): v for k, v in ready.items()},
                                  rows_fetched, rows_fetched * d_sub * itemsize, accesses, hits))
        cache_admit_evict(tier, np.concatenate(all_keys))

    stall = sum(r.stall_us for r in reports)
    compute = sum(r.compute_us for r in reports)
    warm = reports[warmup_steps:]

    def rate(rs):
        acc = sum(r.accesses for r in rs)
        return sum(r.hot_hits for r in rs) / acc if acc else 0.0

    return OverlapReport(
        stall_time=stall,
        total_compute=compute,
        bytes_fetched=sum(r.bytes_fetched for r in reports),
        bytes_fetched_after_warmup=sum(r.bytes_fetched for r in warm),
        hot_hit_rate=rate(reports),
        hot_hit_rate_after_warmup=rate(warm),
        throughput_penalty=stall / compute if compute > 0 else 0.0,
        steps=reports,
    )


def _busy(us: float) -> None:
    end = time.perf_counter() + us * 1e-6
    while time.perf_counter() < end:
        pass


def wallclock_overlap(stores: dict[int, ShardedStore], steps, tiers: TierConfig,
                      compute_trace, *, queue_depth: int = 2) -> dict:
    """Run the same schedule with real threads: a prefetch thread gathers rows and
    waits out the modeled transfer time while the main thread spins through the
    compute trace. Timings are wall-clock and therefore not reproducible."""
    if isinstance(steps, dict):
        steps = [steps]
    depths = sorted(stores)
    q: queue.Queue = queue.Queue(maxsize=queue_depth * len(depths))

    def producer():
        for plans in steps:
            t0 = time.perf_counter()
            for depth in depths:
                plan = plans[depth]
                rows = np.unique(plan.indices).size
                e = stores[depth].gather(plan)
                # the modeled link time counts from the start of the step
                target = t0 + tiers.fetch_latency(rows) * 1e-6
                delay = target - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
                q.put((depth, e))

    worker = threading.Thread(target=producer, name="engram-prefetch", daemon=True)
    start = time.perf_counter()
    worker.start()
    stall = 0.0
    for _ in steps:
        for b, dur in enumerate(compute_trace):
            if b in stores:
                t0 = time.perf_counter()
                depth, _e = q.get()
                if depth != b:
                    raise StoreError(f"prefetch delivered depth {depth} while block {b} waited")
                stall += time.perf_counter() - t0
            _busy(dur)
    worker.join()
    elapsed = time.perf_counter() - start
    compute = len(steps) * float(np.sum(compute_trace)) * 1e-6
    return {"wall_seconds": elapsed, "stall_seconds": stall, "compute_seconds": compute,
            "throughput_penalty": stall / compute if compute > 0 else 0.0}
