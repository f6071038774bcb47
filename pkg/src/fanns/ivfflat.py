"""Inverted-file index with flat (uncompressed) storage.

Rows are partitioned by a k-means clustering (k-means++ seeding, Lloyd
iterations, deterministic given the seed). Search ranks all centroids by
distance and scans the ``n_probe`` nearest inverted lists. The prefilter
mode tests the bitset before computing any row distance, so invalid rows in
the probed lists cost no distance evaluations.

Centroid distances are tracked separately from row distance evaluations in
the telemetry. Centroid ranking never consults the mask: centroids are
synthetic points without attributes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from fanns.corpus import Corpus, FilterMask, Metric, ordering_keys
from fanns.telemetry import SearchResult, SearchTelemetry

_IVF_MAGIC = b"FIV1"

SEARCH_MODES = ("unfiltered", "prefilter", "raw")


class IvfFormatError(ValueError):
    """Raised when an IVFFlat index file is malformed."""


@dataclass
class IvfIndex:
    n_clusters: int
    seed: int
    metric: Metric
    centroids: np.ndarray  # (C, d) float32
    lists: list[np.ndarray]  # per-centroid sorted row-id arrays

    @property
    def n(self) -> int:
        return sum(len(lst) for lst in self.lists)


def _kmeans_pp_seed(rows: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    n = rows.shape[0]
    centroids = np.empty((n_clusters, rows.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = rows[first]
    closest_sq = np.sum((rows - centroids[0]) ** 2, axis=1)
    for i in range(1, n_clusters):
        total = closest_sq.sum()
        if total <= 0.0:
            # all remaining mass collapsed onto existing centroids
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=closest_sq / total))
        centroids[i] = rows[pick]
        closest_sq = np.minimum(closest_sq, np.sum((rows - centroids[i]) ** 2, axis=1))
    return centroids


def ivf_build(
    corpus: Corpus, n_clusters: int, seed: int, max_iters: int = 25, tol: float = 1e-4
) -> IvfIndex:
    """k-means++ seeding plus Lloyd iterations until centroid shift < tol.

    k-means runs in plain L2 geometry (on already-normalized rows for cosine
    corpora, a spherical-k-means approximation). Empty clusters are reseeded
    from the farthest point of the largest cluster. The final row-to-list
    assignment uses the corpus metric.
    """
    if not 1 <= n_clusters <= corpus.n:
        raise ValueError("n_clusters must be in [1, N]")
    rng = np.random.default_rng(seed)
    rows = corpus.vectors.astype(np.float64)
    centroids = _kmeans_pp_seed(rows, n_clusters, rng)
    for _ in range(max_iters):
        # squared L2 via the expansion ||x||^2 - 2 x.c + ||c||^2
        d2 = (
            np.sum(rows**2, axis=1)[:, None]
            - 2.0 * rows @ centroids.T
            + np.sum(centroids**2, axis=1)[None, :]
        )
        assign = np.argmin(d2, axis=1)
        new_centroids = centroids.copy()
        counts = np.bincount(assign, minlength=n_clusters)
        for c in range(n_clusters):
            if counts[c] > 0:
                new_centroids[c] = rows[assign == c].mean(axis=0)
        for c in np.flatnonzero(counts == 0):
            largest = int(np.argmax(counts))
            members = np.flatnonzero(assign == largest)
            dists = np.sum((rows[members] - new_centroids[largest]) ** 2, axis=1)
            stray = members[int(np.argmax(dists))]
            new_centroids[c] = rows[stray]
            assign[stray] = c
            counts = np.bincount(assign, minlength=n_clusters)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break
    # final assignment under the corpus metric
    final_assign = np.empty(corpus.n, dtype=np.int64)
    block = 4096
    for start in range(0, corpus.n, block):
        stop = min(start + block, corpus.n)
        keys = np.stack(
            [
                ordering_keys(centroids[c], rows[start:stop], corpus.metric)
                for c in range(n_clusters)
            ],
            axis=1,
        )
        final_assign[start:stop] = np.argmin(keys, axis=1)
    lists = [np.flatnonzero(final_assign == c).astype(np.int64) for c in range(n_clusters)]
    return IvfIndex(
        n_clusters=n_clusters,
        seed=seed,
        metric=corpus.metric,
        centroids=centroids.astype(np.float32),
        lists=lists,
    )


def ivf_search(
    index: IvfIndex,
    corpus: Corpus,
    query: np.ndarray,
    k: int,
    n_probe: int,
    mode: str = "unfiltered",
    mask: Optional[FilterMask] = None,
    pool_size: Optional[int] = None,
) -> SearchResult:
    """Scan the n_probe nearest inverted lists; see the module docstring."""
    if mode not in SEARCH_MODES:
        raise ValueError(f"unknown search mode {mode!r}")
    if not 1 <= n_probe <= index.n_clusters:
        raise ValueError("n_probe must be in [1, C]")
    if mode == "prefilter" and mask is None:
        raise ValueError("prefilter mode requires a mask")
    if mode == "raw" and (pool_size is None or pool_size < 1):
        raise ValueError("raw mode requires pool_size >= 1")

    telemetry = SearchTelemetry()
    centroid_keys = ordering_keys(query, index.centroids, index.metric)
    telemetry.centroid_evaluations = index.n_clusters
    probe_order = np.lexsort((np.arange(index.n_clusters), centroid_keys))[:n_probe]

    candidate_ids: list[np.ndarray] = []
    candidate_keys: list[np.ndarray] = []
    for c in probe_order:
        ids = index.lists[c]
        if mode == "prefilter":
            ids = ids[mask.bits[ids]]
        if len(ids) == 0:
            continue
        keys = ordering_keys(query, corpus.vectors[ids], corpus.metric)
        telemetry.distance_evaluations += len(ids)
        telemetry.nodes_visited += len(ids)
        candidate_ids.append(ids)
        candidate_keys.append(keys)

    if candidate_ids:
        ids = np.concatenate(candidate_ids)
        keys = np.concatenate(candidate_keys)
        want = pool_size if mode == "raw" else k
        take = min(want, len(ids))
        if take < len(ids):
            part = np.argpartition(keys, take - 1)[:take]
            order = part[np.lexsort((ids[part], keys[part]))]
        else:
            order = np.lexsort((ids, keys))
        ids = ids[order]
        keys = keys[order]
    else:
        ids = np.empty(0, dtype=np.int64)
        keys = np.empty(0, dtype=np.float64)
    return SearchResult(ids=ids.astype(np.int64), distances=keys, telemetry=telemetry)


def save_ivf(index: IvfIndex, path: str | Path) -> None:
    d = index.centroids.shape[1]
    with open(path, "wb") as fh:
        fh.write(_IVF_MAGIC)
        fh.write(struct.pack("<IIqB", index.n_clusters, d, index.seed, index.metric.value))
        fh.write(np.ascontiguousarray(index.centroids, dtype="<f4").tobytes())
        lengths = np.array([len(lst) for lst in index.lists], dtype="<u4")
        fh.write(lengths.tobytes())
        for lst in index.lists:
            fh.write(np.ascontiguousarray(lst, dtype="<u4").tobytes())


def load_ivf(path: str | Path) -> IvfIndex:
    path = Path(path)
    data = path.read_bytes()
    header = struct.calcsize("<IIqB")
    if len(data) < 4 + header or data[:4] != _IVF_MAGIC:
        raise IvfFormatError(f"{path}: bad magic or truncated header")
    n_clusters, d, seed, metric_kind = struct.unpack_from("<IIqB", data, 4)
    offset = 4 + header
    centroids = np.frombuffer(data, dtype="<f4", count=n_clusters * d, offset=offset)
    centroids = centroids.reshape(n_clusters, d).copy()
    offset += 4 * n_clusters * d
    lengths = np.frombuffer(data, dtype="<u4", count=n_clusters, offset=offset)
    offset += 4 * n_clusters
    lists = []
    for length in lengths.tolist():
        if offset + 4 * length > len(data):
            raise IvfFormatError(f"{path}: truncated list payload")
        lists.append(np.frombuffer(data, dtype="<u4", count=length, offset=offset).astype(np.int64))
        offset += 4 * length
    if offset != len(data):
        raise IvfFormatError(f"{path}: trailing bytes")
    return IvfIndex(
        n_clusters=n_clusters,
        seed=seed,
        metric=Metric(metric_kind),
        centroids=centroids,
        lists=lists,
    )
