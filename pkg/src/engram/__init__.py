"""Hashed N-gram conditional memory: retrieval, gated fusion, storage and analysis."""

from .hasher import NGramConfig, RetrievalPlan, hash_index, plan_retrieval, suffix_ngram
from .layer import EngramLayerWeights, engram_layer_backward, engram_layer_forward
from .store import ShardedStore, SparseAdam, TierConfig, prefetch_execute
from .vocab import VocabEntry, VocabProjection, build_projection, normalize_surface, project

__version__ = "0.1.0"

__all__ = [
    "EngramLayerWeights", "NGramConfig", "RetrievalPlan", "ShardedStore", "SparseAdam",
    "TierConfig", "VocabEntry", "VocabProjection", "build_projection", "engram_layer_backward",
    "engram_layer_forward", "hash_index", "normalize_surface", "plan_retrieval",
    "prefetch_execute", "project", "suffix_ngram",
]
