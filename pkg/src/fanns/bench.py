"""Workload generation and the QPS-recall measurement harness.

Protocol: sample the query set from corpus rows, realize each selectivity
target as an attribute threshold, and execute every (query, filter, k,
index config, search param, strategy) cell single-threaded, one query at a
time, each timed individually with a monotonic clock. Throughput is reported
as 1 / latency. Indexes are built once per config and reused across the whole
grid.
"""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from fanns import oracle, strategy
from fanns.corpus import Corpus, FilterMask, build_mask, threshold_for_selectivity
from fanns.hnsw import hnsw_build
from fanns.ivfflat import ivf_build
from fanns.oracle import GroundTruthRow
from fanns.strategy import PlanKind, SearchParams, StrategyPlan

logger = logging.getLogger(__name__)

DEFAULT_TARGETS = (0.01, 0.03, 0.05, 0.1, 0.2, 0.5)
DEFAULT_KS = (1, 10, 40, 100)

RESULTS_HEADER = (
    "dataset,index,M,ef_construction,n_clusters,strategy,search_param,k,"
    "target_sigma,realized_sigma,query_id,recall,recall_eq1,latency_s,qps,"
    "dist_evals,fallback_used,build_time_s"
)


@dataclass(frozen=True)
class FilterSpec:
    """One realized filter condition; target None means unfiltered."""

    target_sigma: Optional[float]
    threshold: Optional[float]
    realized_sigma: float
    mask: Optional[FilterMask]

    @property
    def label(self) -> str:
        return "" if self.target_sigma is None else f"{self.target_sigma:g}"


@dataclass(frozen=True)
class Workload:
    query_ids: np.ndarray
    queries: np.ndarray
    filters: tuple[FilterSpec, ...]
    ks: tuple[int, ...]
    seed: int

    @property
    def n_instances(self) -> int:
        return len(self.query_ids) * len(self.filters) * len(self.ks)


@dataclass(frozen=True)
class IndexConfig:
    """One index build: kind 'hnsw' (m, ef_construction) or 'ivfflat' (n_clusters)."""

    kind: str
    m: Optional[int] = None
    ef_construction: Optional[int] = None
    n_clusters: Optional[int] = None
    seed: int = 0
    search_params: tuple[int, ...] = ()  # ef_search values or n_probe values

    def __post_init__(self):
        if self.kind not in ("hnsw", "ivfflat"):
            raise ValueError(f"unknown index kind {self.kind!r}")
        if self.kind == "hnsw" and (self.m is None or self.ef_construction is None):
            raise ValueError("hnsw config requires m and ef_construction")
        if self.kind == "ivfflat" and self.n_clusters is None:
            raise ValueError("ivfflat config requires n_clusters")


def make_workload(
    corpus: Corpus,
    n_queries: int,
    targets: Sequence[float] = DEFAULT_TARGETS,
    ks: Sequence[int] = DEFAULT_KS,
    seed: int = 0,
    include_unfiltered: bool = True,
) -> Workload:
    """Sample queries without replacement and realize each selectivity target.

    If the attribute granularity cannot hit a target (relative error > 10%),
    the nearest attainable threshold is used and a warning is emitted.
    """
    if not 1 <= n_queries <= corpus.n:
        raise ValueError("n_queries must be in [1, N]")
    rng = np.random.default_rng(seed)
    query_ids = np.sort(rng.choice(corpus.n, size=n_queries, replace=False))
    filters: list[FilterSpec] = []
    for target in targets:
        threshold = threshold_for_selectivity(corpus, target)
        mask = build_mask(corpus, threshold)
        realized = mask.global_selectivity
        if target > 0 and abs(realized - target) / target > 0.10:
            warnings.warn(
                f"selectivity target {target:g} unattainable; nearest is {realized:g}",
                stacklevel=2,
            )
        filters.append(FilterSpec(target, threshold, realized, mask))
    if include_unfiltered:
        filters.append(FilterSpec(None, None, 1.0, None))
    return Workload(
        query_ids=query_ids,
        queries=corpus.vectors[query_ids].copy(),
        filters=tuple(filters),
        ks=tuple(ks),
        seed=seed,
    )


def recall_at_k(
    ids: np.ndarray,
    distances: np.ndarray,
    ground_truth: GroundTruthRow,
    k: int,
) -> tuple[float, float]:
    """(recall, raw-fixed-denominator recall) of one result against exact GT.

    The first value divides by min(k, |GT|) and accepts distance ties: a
    returned id not in the GT top-k still counts if its distance does not
    exceed the GT k-th distance. The second divides the plain id
    intersection by k.
    """
    gt = ground_truth.top(k)
    if len(gt) == 0:
        return (1.0 if len(ids) == 0 else 0.0), 0.0
    gt_ids = set(int(i) for i in gt.ids)
    kth = float(gt.distances[-1])
    hits = 0
    plain = 0
    for rid, dist in zip(ids[:k], distances[:k]):
        if int(rid) in gt_ids:
            hits += 1
            plain += 1
        elif dist <= kth + 1e-12:
            hits += 1
    return hits / min(k, len(gt)), plain / k


def _plan_for(name: str) -> StrategyPlan:
    table = {
        "PreAnns": StrategyPlan(PlanKind.PRE_ANNS),
        "PreExact": StrategyPlan(PlanKind.PRE_EXACT),
        "Post": StrategyPlan(PlanKind.POST),
        "Runtime": StrategyPlan(PlanKind.RUNTIME),
        "AdaptiveAuto": StrategyPlan(PlanKind.ADAPTIVE_AUTO),
    }
    if name not in table:
        raise ValueError(f"unknown strategy {name!r}")
    return table[name]


def _build_index(corpus: Corpus, config: IndexConfig):
    start = time.perf_counter()
    if config.kind == "hnsw":
        index = hnsw_build(corpus, config.m, config.ef_construction, config.seed)
    else:
        index = ivf_build(corpus, config.n_clusters, config.seed)
    return index, time.perf_counter() - start


def run_experiment(
    corpus: Corpus,
    workload: Workload,
    index_grid: Sequence[IndexConfig],
    strategy_list: Sequence[str],
    out_path: str | Path | None = None,
    dataset_name: str = "synthetic",
    prebuilt: Optional[Sequence] = None,
) -> list[dict]:
    """Execute the full grid and return one row dict per cell.

    Ground truth is computed once per (filter, query) at max(ks) and sliced.
    Incompatible cells (Runtime strategy without a filter) are logged and
    skipped, never silently dropped. `prebuilt`, when given, must align with
    `index_grid` and supplies already-built indexes (their build time is
    reported as 0).
    """
    if not index_grid or not strategy_list:
        raise ValueError("index_grid and strategy_list must be nonempty")
    plans = {name: _plan_for(name) for name in strategy_list}
    k_max = max(workload.ks)

    gt_cache: dict[int, list[GroundTruthRow]] = {}
    for fi, spec in enumerate(workload.filters):
        gt_cache[fi] = [
            oracle.exact_knn(corpus, q, k_max, spec.mask) for q in workload.queries
        ]

    rows: list[dict] = []
    for ci, config in enumerate(index_grid):
        if prebuilt is not None:
            index, build_time = prebuilt[ci], 0.0
        else:
            index, build_time = _build_index(corpus, config)
        for param in config.search_params:
            params = (
                SearchParams(ef_search=param)
                if config.kind == "hnsw"
                else SearchParams(n_probe=min(param, config.n_clusters))
            )
            # warm-up pass: touch the whole search path once, untimed
            for name in strategy_list:
                if name == "Runtime" and workload.filters[0].mask is None:
                    continue
                strategy.execute(
                    index, corpus, workload.queries[0], workload.ks[0],
                    workload.filters[0].mask, plans[name], params,
                )
            for fi, spec in enumerate(workload.filters):
                for name in strategy_list:
                    if name == "Runtime" and spec.mask is None:
                        logger.info("skipping Runtime strategy on unfiltered queries")
                        continue
                    for k in workload.ks:
                        for qi, query in enumerate(workload.queries):
                            record = strategy.execute(
                                index, corpus, query, k, spec.mask, plans[name], params
                            )
                            rec, rec_eq1 = recall_at_k(
                                record.results.ids,
                                record.results.distances,
                                gt_cache[fi][qi],
                                k,
                            )
                            rows.append(
                                {
                                    "dataset": dataset_name,
                                    "index": config.kind,
                                    "M": config.m if config.kind == "hnsw" else "",
                                    "ef_construction": config.ef_construction
                                    if config.kind == "hnsw"
                                    else "",
                                    "n_clusters": config.n_clusters
                                    if config.kind == "ivfflat"
                                    else "",
                                    "strategy": name,
                                    "search_param": param,
                                    "k": k,
                                    "target_sigma": spec.label,
                                    "realized_sigma": spec.realized_sigma,
                                    "query_id": int(workload.query_ids[qi]),
                                    "recall": rec,
                                    "recall_eq1": rec_eq1,
                                    "latency_s": record.latency,
                                    "qps": record.qps,
                                    "dist_evals": record.telemetry.distance_evaluations
                                    + record.telemetry.centroid_evaluations,
                                    "fallback_used": int(record.telemetry.fallback_used),
                                    "build_time_s": build_time,
                                }
                            )
    if out_path is not None:
        write_results_csv(rows, out_path)
    return rows


def write_results_csv(rows: Sequence[dict], path: str | Path) -> None:
    header = RESULTS_HEADER.split(",")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)


def load_results_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        raw = list(csv.DictReader(fh))
    rows = []
    for r in raw:
        row = dict(r)
        for col in ("recall", "recall_eq1", "latency_s", "qps", "realized_sigma", "build_time_s"):
            row[col] = float(row[col])
        for col in ("search_param", "k", "query_id", "dist_evals", "fallback_used"):
            row[col] = int(row[col])
        rows.append(row)
    return rows


def pareto_frontier(points: Sequence[tuple[float, float]]) -> list[int]:
    """Indices of (recall, qps) points not dominated by any other point.

    A point dominates another when it is >= in both coordinates and > in at
    least one.
    """
    keep = []
    for i, (r_i, q_i) in enumerate(points):
        dominated = any(
            (r_j >= r_i and q_j >= q_i) and (r_j > r_i or q_j > q_i)
            for j, (r_j, q_j) in enumerate(points)
            if j != i
        )
        if not dominated:
            keep.append(i)
    return keep


_CONFIG_COLS = (
    "index", "M", "ef_construction", "n_clusters", "strategy", "search_param",
)


def summarize(rows: Sequence[dict], out_path: str | Path | None = None) -> list[dict]:
    """Per-config mean recall / mean QPS, with a frontier flag per (k, filter).

    The frontier is computed within each (k, target_sigma) group over the
    config aggregates.
    """
    if not rows:
        raise ValueError("no result rows")
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = tuple(row[c] for c in _CONFIG_COLS) + (row["k"], row["target_sigma"])
        groups.setdefault(key, []).append(row)
    agg = []
    for key, members in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0]))):
        entry = dict(zip(_CONFIG_COLS, key[:-2]))
        entry["k"] = key[-2]
        entry["target_sigma"] = key[-1]
        entry["mean_recall"] = float(np.mean([m["recall"] for m in members]))
        entry["mean_qps"] = float(np.mean([m["qps"] for m in members]))
        entry["n_queries"] = len(members)
        agg.append(entry)
    by_slice: dict[tuple, list[int]] = {}
    for i, entry in enumerate(agg):
        by_slice.setdefault((entry["k"], entry["target_sigma"]), []).append(i)
    for indices in by_slice.values():
        points = [(agg[i]["mean_recall"], agg[i]["mean_qps"]) for i in indices]
        frontier = set(pareto_frontier(points))
        for pos, i in enumerate(indices):
            agg[i]["on_frontier"] = int(pos in frontier)
    if out_path is not None:
        fieldnames = list(_CONFIG_COLS) + [
            "k", "target_sigma", "mean_recall", "mean_qps", "n_queries", "on_frontier",
        ]
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(agg)
    return agg
