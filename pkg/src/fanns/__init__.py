"""Filtered approximate nearest neighbor search engine.

Self-contained implementation of filtered vector search over HNSW and
IVFFlat indexes, generic filtering strategies (pre-, post-, runtime-filter,
exact fallback), the global-local selectivity correlation metric, and a
single-threaded recall/QPS benchmark harness.
"""

from fanns.corpus import Corpus, FilterMask, Metric

__all__ = ["Corpus", "FilterMask", "Metric"]
__version__ = "0.1.0"
