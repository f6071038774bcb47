"""Vector/attribute storage, distance kernels, file IO and synthetic data.

A :class:`Corpus` is an immutable pair of a row-major float32 vector matrix
and a float64 scalar attribute column. Filters are materialized as dense
boolean masks over row ids (:class:`FilterMask`).

All search code in this package orders candidates by a single scalar key
where *smaller means closer*: the L2 metric uses the Euclidean distance
itself, inner product and cosine use the negated similarity. The public
:func:`distance` function reports the conventional value for each metric
(similarities are positive, larger = closer).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

_CORPUS_MAGIC = b"FVC1"
_NORM_ATOL = 1e-5


class CorpusFormatError(ValueError):
    """Raised when a corpus file is malformed."""


class Metric(Enum):
    L2 = 0
    INNER_PRODUCT = 1
    COSINE = 2


@dataclass(frozen=True)
class Corpus:
    """Immutable store of N d-dimensional vectors plus one scalar attribute.

    Row ids are implicit 0..N-1. Vectors are float32, the attribute column
    float64 (quantile computations on the attribute should not suffer from
    float32 granularity).
    """

    vectors: np.ndarray
    attribute: np.ndarray
    metric: Metric = Metric.L2
    normalized: bool = False

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        attribute = np.ascontiguousarray(self.attribute, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] < 1 or vectors.shape[1] < 1:
            raise ValueError("vectors must be a non-empty N x d matrix")
        if attribute.shape != (vectors.shape[0],):
            raise ValueError("attribute column length must equal the number of rows")
        if self.metric is Metric.COSINE and self.normalized:
            norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
            if not np.allclose(norms, 1.0, atol=_NORM_ATOL):
                raise ValueError("normalized cosine corpus has rows with non-unit L2 norm")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "attribute", attribute)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class FilterMask:
    """Dense bitset over row ids with a cached popcount.

    Empty masks are legal values but are flagged so that correlation
    analysis can exclude them.
    """

    bits: np.ndarray
    valid_count: int = field(init=False)

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "valid_count", int(bits.sum()))

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    @property
    def global_selectivity(self) -> float:
        return self.valid_count / self.n

    @property
    def is_empty(self) -> bool:
        return self.valid_count == 0

    def valid_ids(self) -> np.ndarray:
        return np.flatnonzero(self.bits)


def distance(a: np.ndarray, b: np.ndarray, metric: Metric) -> float:
    """Distance (L2) or similarity (inner product, cosine) between two vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if metric is Metric.L2:
        return float(np.sqrt(np.sum((a - b) ** 2)))
    if metric is Metric.INNER_PRODUCT:
        return float(np.dot(a, b))
    if metric is Metric.COSINE:
        denom = float(np.linalg.norm(a) * np.linalg.norm(b))
        if denom == 0.0:
            raise ValueError("cosine similarity undefined for zero vectors")
        return float(np.dot(a, b)) / denom
    raise ValueError(f"unknown metric {metric!r}")


def ordering_keys(query: np.ndarray, rows: np.ndarray, metric: Metric) -> np.ndarray:
    """Vectorized smaller-is-closer ordering keys from `query` to each row.

    For L2 the key is the Euclidean distance; for inner product and cosine it
    is the negated similarity. Computed in float64 so that identical
    (query, row) pairs yield identical keys regardless of batching.
    """
    query = np.asarray(query, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape[1] != query.shape[0]:
        raise ValueError(f"dimension mismatch: {query.shape[0]} vs {rows.shape[1]}")
    if metric is Metric.L2:
        diff = rows - query
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if metric is Metric.INNER_PRODUCT:
        return -(rows @ query)
    if metric is Metric.COSINE:
        qnorm = np.linalg.norm(query)
        rnorms = np.linalg.norm(rows, axis=1)
        denom = qnorm * rnorms
        if qnorm == 0.0 or np.any(rnorms == 0.0):
            raise ValueError("cosine similarity undefined for zero vectors")
        return -(rows @ query) / denom
    raise ValueError(f"unknown metric {metric!r}")


def key_to_distance(key: float | np.ndarray, metric: Metric):
    """Map an ordering key back to the metric's conventional value."""
    if metric is Metric.L2:
        return key
    return -key


def build_mask(corpus: Corpus, threshold: float) -> FilterMask:
    """Mask of rows whose attribute is >= threshold."""
    return FilterMask(corpus.attribute >= threshold)


def threshold_for_selectivity(corpus: Corpus, target_sigma: float) -> float:
    """Threshold whose >=-mask has global selectivity closest to the target.

    Candidate thresholds are the distinct attribute values; ties at the
    quantile boundary all pass, so the realized selectivity may overshoot.
    Among equally good candidates the lower threshold wins.
    """
    if not 0.0 < target_sigma <= 1.0:
        raise ValueError("target_sigma must be in (0, 1]")
    values, counts = np.unique(corpus.attribute, return_counts=True)
    # selectivity of ">= values[i]" is the suffix popcount starting at i
    suffix = np.cumsum(counts[::-1])[::-1]
    sigmas = suffix / corpus.n
    best = int(np.argmin(np.abs(sigmas - target_sigma)))
    return float(values[best])


def generate_synthetic(
    n: int,
    d: int,
    seed: int,
    attr_mode: str = "independent",
    strength: float = 1.0,
    n_groups: int = 16,
    group_spread: float = 0.25,
) -> Corpus:
    """Deterministic synthetic corpus of unit-norm vectors plus an attribute.

    ``independent`` draws the attribute uniform[0,1) independent of the
    vectors. ``cluster_correlated`` assigns vectors to ``n_groups`` Gaussian
    clusters on the sphere and blends a per-cluster quantile into the
    attribute, giving tunable filter-vector correlation: ``strength=0``
    degenerates to independent, ``strength=1`` makes the attribute a pure
    function of cluster membership (plus within-cluster jitter).
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    if attr_mode == "independent":
        vectors = rng.standard_normal((n, d))
        attribute = rng.uniform(0.0, 1.0, size=n)
    elif attr_mode == "cluster_correlated":
        centers = rng.standard_normal((n_groups, d))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        assignment = rng.integers(0, n_groups, size=n)
        vectors = centers[assignment] + group_spread * rng.standard_normal((n, d))
        within = rng.uniform(0.0, 1.0, size=n)
        noise = rng.uniform(0.0, 1.0, size=n)
        cluster_quantile = (assignment + within) / n_groups
        attribute = strength * cluster_quantile + (1.0 - strength) * noise
    else:
        raise ValueError(f"unknown attr_mode {attr_mode!r}")
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return Corpus(
        vectors=vectors.astype(np.float32),
        attribute=attribute,
        metric=Metric.COSINE,
        normalized=True,
    )


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the binary corpus format (magic FVC1, little-endian)."""
    path = Path(path)
    header = _CORPUS_MAGIC + struct.pack(
        "<IIBBxx", corpus.n, corpus.dim, corpus.metric.value, int(corpus.normalized)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(corpus.vectors, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(corpus.attribute, dtype="<f8").tobytes())


def load_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16:
        raise CorpusFormatError(f"{path}: truncated header")
    if data[:4] != _CORPUS_MAGIC:
        raise CorpusFormatError(f"{path}: bad magic {data[:4]!r}")
    n, d, metric_kind, normalized = struct.unpack("<IIBBxx", data[4:16])
    if n < 1 or d < 1 or n * d > 2**31:
        raise CorpusFormatError(f"{path}: implausible dimensions N={n} d={d}")
    try:
        metric = Metric(metric_kind)
    except ValueError as exc:
        raise CorpusFormatError(f"{path}: unknown metric kind {metric_kind}") from exc
    vec_bytes = 4 * n * d
    attr_bytes = 8 * n
    if len(data) != 16 + vec_bytes + attr_bytes:
        raise CorpusFormatError(f"{path}: truncated payload ({len(data)} bytes)")
    vectors = np.frombuffer(data, dtype="<f4", count=n * d, offset=16).reshape(n, d)
    attribute = np.frombuffer(data, dtype="<f8", count=n, offset=16 + vec_bytes)
    return Corpus(
        vectors=vectors.copy(),
        attribute=attribute.copy(),
        metric=metric,
        normalized=bool(normalized),
    )


def export_attributes_csv(corpus: Corpus, path: str | Path) -> None:
    """Attribute column as CSV with header ``id,attribute``."""
    with open(path, "w") as fh:
        fh.write("id,attribute\n")
        for i, value in enumerate(corpus.attribute):
            fh.write(f"{i},{float(value)!r}\n")
