"""Embedding storage: sharded tables, lazy Adam, hot tier and prefetch scheduling."""

from .cache import CountMinSketch, HotTier, cache_admit_evict
from .prefetch import OverlapReport, TierConfig, prefetch_execute, trace_for_window, wallclock_overlap
from .tables import EmbeddingTable, ShardedStore, SparseAdam, StoreError, TableId

__all__ = [
    "CountMinSketch", "EmbeddingTable", "HotTier", "OverlapReport", "ShardedStore",
    "SparseAdam", "StoreError", "TableId", "TierConfig", "cache_admit_evict",
    "prefetch_execute", "trace_for_window", "wallclock_overlap",
]
