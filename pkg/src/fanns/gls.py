"""Global-local selectivity correlation, plus a distance-based baseline.

For a query q and filter mask, the local selectivity sigma_l is the fraction
of q's (unfiltered) k-nearest neighborhood that passes the filter, and the
global selectivity sigma_g is the mask's valid fraction of the corpus. The
ratio r = sigma_l / sigma_g is mapped through the Moebius transform
rho = (r - 1) / (r + 1) into [-1, 1): rho > 0 means the filter enriches the
neighborhood, rho < 0 means it depletes it, rho = 0 is neutral.

``distance_correlation`` implements the older min-distance baseline: the
expected gap between the nearest valid row and the nearest row of an
equally-sized uniform random subset. Positive values mean valid rows sit
closer to the query than chance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from fanns import oracle
from fanns.corpus import Corpus, FilterMask, ordering_keys
from fanns.hnsw import HnswIndex, hnsw_search
from fanns.ivfflat import IvfIndex, ivf_search

DEFAULT_K_NEIGHBORHOOD = 2048

BIN_LOW_THRESHOLD = -0.3
BIN_HIGH_THRESHOLD = 0.3


@dataclass(frozen=True)
class GlsEntry:
    query_id: int
    sigma_g: float
    sigma_l: float
    ratio: float
    rho: float
    bin: str  # "low" | "medium" | "high"


@dataclass(frozen=True)
class GlsReport:
    entries: list[GlsEntry]
    rho_bar: float
    skipped_empty_masks: int = 0


def gls_rho(ratio: float) -> float:
    """Moebius map r -> (r-1)/(r+1), monotonic from [0, inf) onto [-1, 1)."""
    if ratio < 0:
        raise ValueError("selectivity ratio must be >= 0")
    return (ratio - 1.0) / (ratio + 1.0)


def gls_inverse(rho: float) -> float:
    """Inverse map rho -> (1+rho)/(1-rho) for rho in [-1, 1)."""
    if not -1.0 <= rho < 1.0:
        raise ValueError("rho must be in [-1, 1)")
    return (1.0 + rho) / (1.0 - rho)


def _bin_for(rho: float) -> str:
    if rho < BIN_LOW_THRESHOLD:
        return "low"
    if rho > BIN_HIGH_THRESHOLD:
        return "high"
    return "medium"


def _entry(query_id: int, sigma_l: float, sigma_g: float) -> GlsEntry:
    ratio = sigma_l / sigma_g
    rho = gls_rho(ratio)
    return GlsEntry(
        query_id=query_id,
        sigma_g=sigma_g,
        sigma_l=sigma_l,
        ratio=ratio,
        rho=rho,
        bin=_bin_for(rho),
    )


def gls_exact(
    corpus: Corpus,
    query: np.ndarray,
    mask: FilterMask,
    k_neighborhood: int = DEFAULT_K_NEIGHBORHOOD,
    query_id: int = 0,
) -> GlsEntry:
    """Exact per-query entry: the neighborhood comes from a brute-force scan."""
    if mask.is_empty:
        raise ValueError("mask must be non-empty")
    if k_neighborhood < 1:
        raise ValueError("k_neighborhood must be >= 1")
    neighborhood = oracle.exact_knn(corpus, query, k_neighborhood).ids
    sigma_l = float(np.count_nonzero(mask.bits[neighborhood])) / len(neighborhood)
    return _entry(query_id, sigma_l, mask.global_selectivity)


def gls_approx(
    corpus: Corpus,
    index,
    query: np.ndarray,
    mask: FilterMask,
    k_neighborhood: int = DEFAULT_K_NEIGHBORHOOD,
    sample_size: int = 1000,
    seed: int = 0,
    ef_search: Optional[int] = None,
    n_probe: Optional[int] = None,
    query_id: int = 0,
) -> GlsEntry:
    """Cheap estimate: ANN neighborhood for sigma_l, uniform sample for sigma_g.

    The sample is drawn without replacement, so sample_size = N recovers the
    exact global selectivity.
    """
    if mask.is_empty:
        raise ValueError("mask must be non-empty")
    if not 1 <= sample_size <= corpus.n:
        raise ValueError("sample_size must be in [1, N]")
    if isinstance(index, HnswIndex):
        ef = ef_search if ef_search is not None else k_neighborhood
        pool = min(k_neighborhood, ef)
        result = hnsw_search(index, corpus, query, pool, ef, mode="raw", pool_size=pool)
    elif isinstance(index, IvfIndex):
        probes = n_probe if n_probe is not None else index.n_clusters
        result = ivf_search(
            index, corpus, query, k_neighborhood, probes, mode="raw", pool_size=k_neighborhood
        )
    else:
        raise TypeError(f"unsupported index type {type(index).__name__}")
    neighborhood = result.ids
    if len(neighborhood) == 0:
        raise ValueError("index returned an empty neighborhood")
    sigma_l = float(np.count_nonzero(mask.bits[neighborhood])) / len(neighborhood)
    rng = np.random.default_rng(seed)
    sample = rng.choice(corpus.n, size=sample_size, replace=False)
    sigma_g = float(np.count_nonzero(mask.bits[sample])) / sample_size
    if sigma_g == 0.0:
        # degenerate sample; fall back to the known mask selectivity
        sigma_g = mask.global_selectivity
    return _entry(query_id, sigma_l, sigma_g)


def gls_mean(entries: Sequence[GlsEntry]) -> float:
    if len(entries) == 0:
        raise ValueError("need at least one entry")
    return float(np.mean([e.rho for e in entries]))


def gls_report(
    corpus: Corpus,
    queries: np.ndarray,
    masks: Sequence[FilterMask],
    k_neighborhood: int = DEFAULT_K_NEIGHBORHOOD,
) -> GlsReport:
    """Exact entries for every (query, mask) pair; empty masks are skipped
    (and counted) rather than silently dropped."""
    queries = np.atleast_2d(np.asarray(queries))
    entries: list[GlsEntry] = []
    skipped = 0
    qid = 0
    for mask in masks:
        for query in queries:
            if mask.is_empty:
                skipped += 1
            else:
                entries.append(gls_exact(corpus, query, mask, k_neighborhood, query_id=qid))
            qid += 1
    rho_bar = gls_mean(entries) if entries else float("nan")
    return GlsReport(entries=entries, rho_bar=rho_bar, skipped_empty_masks=skipped)


def distance_correlation(
    corpus: Corpus,
    queries_with_masks: Sequence[tuple[np.ndarray, FilterMask]],
    trials: int = 10,
    seed: int = 0,
) -> tuple[float, np.ndarray]:
    """Min-distance baseline correlation: C and the per-query values.

    For each (query, mask): C_q = E[g(q, R)] - g(q, valid set), where R is a
    uniform random subset of the corpus with |R| = |valid set| and g is the
    minimum ordering key over the subset. The expectation is a Monte Carlo
    mean over `trials` draws without replacement, so a full mask gives
    C_q = 0 exactly.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    per_query = np.empty(len(queries_with_masks))
    for i, (query, mask) in enumerate(queries_with_masks):
        if mask.is_empty:
            raise ValueError("mask must be non-empty")
        valid = mask.valid_ids()
        g_filtered = float(np.min(ordering_keys(query, corpus.vectors[valid], corpus.metric)))
        g_random = 0.0
        for _ in range(trials):
            sample = rng.choice(corpus.n, size=len(valid), replace=False)
            g_random += float(np.min(ordering_keys(query, corpus.vectors[sample], corpus.metric)))
        per_query[i] = g_random / trials - g_filtered
    return float(per_query.mean()), per_query


def write_gls_csv(entries: Sequence[GlsEntry], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "sigma_g", "sigma_l", "ratio", "rho", "bin"])
        for e in entries:
            writer.writerow(
                [e.query_id, f"{e.sigma_g:.10g}", f"{e.sigma_l:.10g}",
                 f"{e.ratio:.10g}", f"{e.rho:.10g}", e.bin]
            )
