"""Uniform filtered-query executor over either index type.

Implements the strategy taxonomy: pre-filter + approximate search,
pre-filter + exact scan, post-filter over a raw candidate pool, runtime
(lazy predicate) filtering, plus an adaptive policy that falls back to the
exact scan when the filtered-out ratio exceeds a threshold and reruns
exactly whenever the approximate pass comes back short (safety net).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from fanns import oracle
from fanns.corpus import Corpus, FilterMask
from fanns.hnsw import HnswIndex, hnsw_search
from fanns.ivfflat import IvfIndex, ivf_search
from fanns.telemetry import SearchResult, SearchTelemetry

FALLBACK_RATIO_THRESHOLD = 0.93


class ConfigurationError(ValueError):
    """Unsupported (plan, index) combination or missing parameters."""


class PlanKind(Enum):
    PRE_ANNS = "PreAnns"
    PRE_EXACT = "PreExact"
    POST = "Post"
    RUNTIME = "Runtime"
    ADAPTIVE_AUTO = "AdaptiveAuto"


@dataclass(frozen=True)
class StrategyPlan:
    kind: PlanKind
    expansion: Optional[float] = None  # Post: candidate pool multiplier (>= 1)
    fallback_ratio_threshold: float = FALLBACK_RATIO_THRESHOLD
    safety_net: bool = True
    dual_pool: bool = False  # PreAnns on HNSW: use the dual-pool traversal

    def __post_init__(self):
        if self.expansion is not None and self.expansion < 1:
            raise ConfigurationError("expansion multiplier must be >= 1")
        if not 0.0 < self.fallback_ratio_threshold < 1.0:
            raise ConfigurationError("fallback_ratio_threshold must be in (0, 1)")


@dataclass(frozen=True)
class SearchParams:
    ef_search: Optional[int] = None
    n_probe: Optional[int] = None

    def value_for(self, index) -> int:
        if isinstance(index, HnswIndex):
            if self.ef_search is None:
                raise ConfigurationError("HNSW execution requires ef_search")
            return self.ef_search
        if isinstance(index, IvfIndex):
            if self.n_probe is None:
                raise ConfigurationError("IVFFlat execution requires n_probe")
            return self.n_probe
        raise ConfigurationError(f"unsupported index type {type(index).__name__}")


@dataclass
class ExecutionRecord:
    plan_chosen: PlanKind
    results: SearchResult
    telemetry: SearchTelemetry
    latency: float  # seconds, wall clock, single query

    @property
    def qps(self) -> float:
        return 1.0 / self.latency


def _exact(corpus, query, k, mask) -> SearchResult:
    row = oracle.exact_knn(corpus, query, k, mask)
    telemetry = SearchTelemetry(
        distance_evaluations=mask.valid_count if mask is not None else corpus.n,
        nodes_visited=mask.valid_count if mask is not None else corpus.n,
    )
    return SearchResult(ids=row.ids, distances=row.distances, telemetry=telemetry)


def _raw_pool(index, corpus, query, pool_size, params) -> SearchResult:
    if isinstance(index, HnswIndex):
        return hnsw_search(
            index, corpus, query, pool_size, pool_size, mode="raw", pool_size=pool_size
        )
    return ivf_search(
        index, corpus, query, pool_size, params.value_for(index), mode="raw", pool_size=pool_size
    )


def _pre_anns(index, corpus, query, k, mask, params, dual_pool) -> SearchResult:
    if mask is None:
        if isinstance(index, HnswIndex):
            return hnsw_search(index, corpus, query, k, params.value_for(index))
        return ivf_search(index, corpus, query, k, params.value_for(index))
    if isinstance(index, HnswIndex):
        mode = "dualpool" if dual_pool else "prefilter"
        return hnsw_search(index, corpus, query, k, params.value_for(index), mode=mode, mask=mask)
    if isinstance(index, IvfIndex):
        return ivf_search(
            index, corpus, query, k, params.value_for(index), mode="prefilter", mask=mask
        )
    raise ConfigurationError(f"unsupported index type {type(index).__name__}")


def default_expansion(mask: Optional[FilterMask], k: int, n: int) -> float:
    """ceil(1 / selectivity), capped at N / k."""
    if mask is None or mask.global_selectivity == 0.0:
        return 1.0
    return min(math.ceil(1.0 / mask.global_selectivity), max(n / k, 1.0))


def execute(
    index,
    corpus: Corpus,
    query: np.ndarray,
    k: int,
    mask: Optional[FilterMask],
    plan: StrategyPlan,
    params: SearchParams,
) -> ExecutionRecord:
    """Run one filtered query under the given plan, timing the whole call."""
    if mask is not None and mask.is_empty and plan.kind is not PlanKind.PRE_ANNS:
        raise ValueError("mask must be non-empty for filtered plans")
    start = time.perf_counter_ns()
    plan_chosen, result = _dispatch(index, corpus, query, k, mask, plan, params)
    latency = max(time.perf_counter_ns() - start, 1) / 1e9
    return ExecutionRecord(
        plan_chosen=plan_chosen, results=result, telemetry=result.telemetry, latency=latency
    )


def _dispatch(index, corpus, query, k, mask, plan, params) -> tuple[PlanKind, SearchResult]:
    kind = plan.kind
    if kind is PlanKind.PRE_EXACT:
        return kind, _exact(corpus, query, k, mask)

    if kind is PlanKind.PRE_ANNS:
        return kind, _pre_anns(index, corpus, query, k, mask, params, plan.dual_pool)

    if kind is PlanKind.POST:
        expansion = plan.expansion
        if expansion is None:
            expansion = default_expansion(mask, k, corpus.n)
        pool_size = min(max(int(math.ceil(expansion * k)), k), corpus.n)
        result = _raw_pool(index, corpus, query, pool_size, params)
        if mask is not None:
            keep = mask.bits[result.ids]
            result = SearchResult(
                ids=result.ids[keep][:k],
                distances=result.distances[keep][:k],
                telemetry=result.telemetry,
            )
        else:
            result = SearchResult(
                ids=result.ids[:k], distances=result.distances[:k], telemetry=result.telemetry
            )
        return kind, result

    if kind is PlanKind.RUNTIME:
        return kind, _runtime(index, corpus, query, k, mask, params)

    if kind is PlanKind.ADAPTIVE_AUTO:
        if mask is None:
            return PlanKind.PRE_ANNS, _pre_anns(index, corpus, query, k, None, params, False)
        filtered_ratio = 1.0 - mask.global_selectivity
        if filtered_ratio > plan.fallback_ratio_threshold:
            result = _exact(corpus, query, k, mask)
            result.telemetry.fallback_used = True
            return PlanKind.PRE_EXACT, result
        dual = isinstance(index, HnswIndex)
        result = _pre_anns(index, corpus, query, k, mask, params, dual)
        if plan.safety_net and len(result) < min(k, mask.valid_count):
            result = _exact(corpus, query, k, mask)
            result.telemetry.fallback_used = True
            return PlanKind.PRE_EXACT, result
        return PlanKind.PRE_ANNS, result

    raise ConfigurationError(f"unknown plan kind {plan.kind!r}")


def _runtime(index, corpus, query, k, mask, params) -> SearchResult:
    """Lazy predicate evaluation: the traversal never reads a bitset.

    The predicate is invoked once per candidate whose validity the executor
    actually needs, and the invocation count is recorded. Result ids match
    the prefilter path for the same traversal.
    """
    if mask is None:
        raise ConfigurationError("Runtime plan requires a mask")
    predicate_calls = 0
    known: dict[int, bool] = {}

    def predicate(row: int) -> bool:
        nonlocal predicate_calls
        if row not in known:
            predicate_calls += 1
            known[row] = bool(mask.bits[row])
        return known[row]

    if isinstance(index, HnswIndex):
        width = params.value_for(index)
        raw = hnsw_search(index, corpus, query, width, width, mode="raw", pool_size=width)
        keep = [i for i, row in enumerate(raw.ids) if predicate(int(row))]
        ids = raw.ids[keep][:k]
        distances = raw.distances[keep][:k]
        telemetry = raw.telemetry
    elif isinstance(index, IvfIndex):
        n_probe = params.value_for(index)
        telemetry = SearchTelemetry(centroid_evaluations=index.n_clusters)
        from fanns.corpus import ordering_keys  # local import to avoid cycle noise

        centroid_keys = ordering_keys(query, index.centroids, index.metric)
        probe_order = np.lexsort((np.arange(index.n_clusters), centroid_keys))[:n_probe]
        cand_ids, cand_keys = [], []
        for c in probe_order:
            ids_in_list = [int(r) for r in index.lists[c] if predicate(int(r))]
            if not ids_in_list:
                continue
            keys = ordering_keys(query, corpus.vectors[ids_in_list], corpus.metric)
            telemetry.distance_evaluations += len(ids_in_list)
            telemetry.nodes_visited += len(ids_in_list)
            cand_ids.append(np.array(ids_in_list, dtype=np.int64))
            cand_keys.append(keys)
        if cand_ids:
            ids_all = np.concatenate(cand_ids)
            keys_all = np.concatenate(cand_keys)
            order = np.lexsort((ids_all, keys_all))[:k]
            ids, distances = ids_all[order], keys_all[order]
        else:
            ids = np.empty(0, dtype=np.int64)
            distances = np.empty(0, dtype=np.float64)
    else:
        raise ConfigurationError(f"unsupported index type {type(index).__name__}")

    telemetry.predicate_invocations = predicate_calls
    return SearchResult(ids=ids, distances=distances, telemetry=telemetry)


def predicate_invocations(record: ExecutionRecord) -> int:
    """Lazy-evaluation count of a Runtime execution."""
    if record.plan_chosen is not PlanKind.RUNTIME:
        raise ConfigurationError("predicate_invocations requires a Runtime record")
    return record.telemetry.predicate_invocations
