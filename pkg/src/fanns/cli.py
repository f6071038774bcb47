"""Command-line frontend: gen / build / gt / run / gls / summarize.

Every subcommand is deterministic given its --seed arguments, validates its
inputs before writing anything, and never mutates input files. Errors exit
nonzero with a subcommand-specific message prefix on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from fanns import bench, gls as gls_mod, oracle
from fanns.corpus import (
    build_mask,
    generate_synthetic,
    load_corpus,
    save_corpus,
    threshold_for_selectivity,
)
from fanns.hnsw import HnswIndex, hnsw_build, load_hnsw, save_hnsw
from fanns.ivfflat import IvfIndex, ivf_build, load_ivf, save_ivf


class CliError(Exception):
    """User-facing CLI failure; message already carries its prefix."""


def _parse_floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _parse_ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fanns", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attr-mode", choices=["independent", "cluster_correlated"],
                   default="independent")
    p.add_argument("--strength", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("build", help="build an index over a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", choices=["hnsw", "ivfflat"], required=True)
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--ef-construction", type=int, default=50)
    p.add_argument("--n-clusters", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gt", help="write exact ground truth for a workload")
    p.add_argument("--corpus", required=True)
    p.add_argument("--n-queries", type=int, default=1000)
    p.add_argument("--targets", type=_parse_floats,
                   default=list(bench.DEFAULT_TARGETS))
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run the measurement grid, write results CSV")
    p.add_argument("--corpus")
    p.add_argument("--index-files", nargs="+", default=None,
                   help="prebuilt index files; omit to build from config")
    p.add_argument("--config", default=None,
                   help="JSON run configuration; explicit flags override it")
    p.add_argument("--n-queries", type=int, default=None)
    p.add_argument("--targets", type=_parse_floats, default=None)
    p.add_argument("--ks", type=_parse_ints, default=None)
    p.add_argument("--strategies", nargs="+", default=None)
    p.add_argument("--search-params", type=_parse_ints, default=None,
                   help="ef_search values for HNSW indexes, n_probe for IVFFlat")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dataset-name", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gls", help="write a per-query selectivity-correlation CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument("--targets", type=_parse_floats, default=[0.2])
    p.add_argument("--k-neighborhood", type=int, default=gls_mod.DEFAULT_K_NEIGHBORHOOD)
    p.add_argument("--index", default=None,
                   help="optional prebuilt index file; uses the approximate estimator")
    p.add_argument("--sample-size", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("summarize", help="aggregate a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    return parser


def _require_file(path: str, prefix: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{prefix}: file not found: {path}")
    return p


def _load_index(path: Path, prefix: str):
    magic = path.read_bytes()[:4]
    if magic == b"FHN1":
        return load_hnsw(path)
    if magic == b"FIV1":
        return load_ivf(path)
    raise CliError(f"{prefix}: {path} is not a recognized index file")


def _cmd_gen(args) -> int:
    corpus = generate_synthetic(
        args.n, args.d, args.seed, attr_mode=args.attr_mode, strength=args.strength
    )
    save_corpus(corpus, args.out)
    print(f"wrote corpus: n={corpus.n} d={corpus.dim} -> {args.out}")
    return 0


def _cmd_build(args) -> int:
    corpus = load_corpus(_require_file(args.corpus, "build error"))
    if args.index == "hnsw":
        index = hnsw_build(corpus, args.m, args.ef_construction, args.seed)
        save_hnsw(index, args.out)
    else:
        n_clusters = args.n_clusters
        if n_clusters is None:
            n_clusters = max(1, int(round(np.sqrt(corpus.n))))
        index = ivf_build(corpus, n_clusters, args.seed)
        save_ivf(index, args.out)
    print(f"wrote {args.index} index -> {args.out}")
    return 0


def _cmd_gt(args) -> int:
    corpus = load_corpus(_require_file(args.corpus, "gt error"))
    workload = bench.make_workload(
        corpus, args.n_queries, targets=args.targets, ks=[args.k], seed=args.seed
    )
    masks = [spec.mask for spec in workload.filters]
    oracle.batch_ground_truth(corpus, workload.queries, args.k, masks, out_path=args.out)
    print(f"wrote ground truth: {len(masks) * len(workload.queries)} rows -> {args.out}")
    return 0


_RUN_DEFAULTS = {
    "n_queries": 100,
    "targets": list(bench.DEFAULT_TARGETS),
    "ks": list(bench.DEFAULT_KS),
    "strategies": ["PreAnns", "Post", "AdaptiveAuto"],
    "search_params": [10, 100],
    "seed": 0,
    "dataset_name": "synthetic",
}


def _cmd_run(args) -> int:
    settings = dict(_RUN_DEFAULTS)
    if args.config is not None:
        cfg_path = _require_file(args.config, "run error")
        try:
            settings.update(json.loads(cfg_path.read_text()))
        except json.JSONDecodeError as exc:
            raise CliError(f"run error: bad JSON in {args.config}: {exc}") from exc
    for key in _RUN_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    corpus_path = args.corpus or settings.get("corpus")
    if corpus_path is None:
        raise CliError("run error: --corpus (or a corpus entry in --config) is required")
    corpus = load_corpus(_require_file(corpus_path, "run error"))

    index_files = args.index_files or settings.get("index_files")
    configs: list[bench.IndexConfig] = []
    prebuilt = None
    if index_files:
        prebuilt = []
        for f in index_files:
            index = _load_index(_require_file(f, "run error"), "run error")
            prebuilt.append(index)
            if isinstance(index, HnswIndex):
                configs.append(bench.IndexConfig(
                    kind="hnsw", m=index.m, ef_construction=index.ef_construction,
                    seed=index.seed, search_params=tuple(settings["search_params"]),
                ))
            else:
                configs.append(bench.IndexConfig(
                    kind="ivfflat", n_clusters=index.n_clusters, seed=index.seed,
                    search_params=tuple(settings["search_params"]),
                ))
    else:
        for raw in settings.get("index_grid", []):
            configs.append(bench.IndexConfig(
                kind=raw["kind"], m=raw.get("m"),
                ef_construction=raw.get("ef_construction"),
                n_clusters=raw.get("n_clusters"), seed=raw.get("seed", 0),
                search_params=tuple(raw.get("search_params", settings["search_params"])),
            ))
    if not configs:
        raise CliError("run error: no indexes given (--index-files or config index_grid)")

    workload = bench.make_workload(
        corpus, settings["n_queries"], targets=settings["targets"],
        ks=settings["ks"], seed=settings["seed"],
    )
    rows = bench.run_experiment(
        corpus, workload, configs, settings["strategies"],
        out_path=args.out, dataset_name=settings["dataset_name"], prebuilt=prebuilt,
    )
    print(f"wrote {len(rows)} result rows -> {args.out}")
    return 0


def _cmd_gls(args) -> int:
    corpus = load_corpus(_require_file(args.corpus, "gls error"))
    rng = np.random.default_rng(args.seed)
    query_ids = np.sort(rng.choice(corpus.n, size=args.n_queries, replace=False))
    queries = corpus.vectors[query_ids]
    index = None
    if args.index is not None:
        index = _load_index(_require_file(args.index, "gls error"), "gls error")
    entries = []
    qid = 0
    for target in args.targets:
        mask = build_mask(corpus, threshold_for_selectivity(corpus, target))
        if mask.is_empty:
            raise CliError(f"gls error: target {target:g} yields an empty filter")
        for query in queries:
            if index is None:
                entries.append(gls_mod.gls_exact(
                    corpus, query, mask, args.k_neighborhood, query_id=qid))
            else:
                entries.append(gls_mod.gls_approx(
                    corpus, index, query, mask, args.k_neighborhood,
                    sample_size=min(args.sample_size, corpus.n),
                    seed=args.seed, query_id=qid))
            qid += 1
    gls_mod.write_gls_csv(entries, args.out)
    rho_bar = gls_mod.gls_mean(entries)
    print(f"wrote {len(entries)} entries (rho_bar={rho_bar:+.4f}) -> {args.out}")
    return 0


def _cmd_summarize(args) -> int:
    rows = bench.load_results_csv(_require_file(args.results, "summarize error"))
    agg = bench.summarize(rows, out_path=args.out)
    print(f"wrote {len(agg)} aggregate rows -> {args.out}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "build": _cmd_build,
    "gt": _cmd_gt,
    "run": _cmd_run,
    "gls": _cmd_gls,
    "summarize": _cmd_summarize,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    prefix = f"{args.command} error"
    try:
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"{prefix}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
