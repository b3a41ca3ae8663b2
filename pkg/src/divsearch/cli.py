"""Command-line interface: gen-corpus, index, query, experiment, bench.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from divsearch import _kernels
from divsearch.ann import AnnTopology, bucketized_knn
from divsearch.core import load_corpus, load_spec, save_corpus, save_spec, score_by_query
from divsearch.errors import ConfigError, DivsearchError
from divsearch.pipeline import (
    config_from_dict,
    generate_corpus,
    generate_queries,
    run_experiment,
)
from divsearch.token_index import StrongOr, build_index, evaluate, parse_squery


def _load_corpus_dir(corpus_dir: str):
    base = Path(corpus_dir)
    spec = load_spec(base / "spec.json")
    return load_corpus(base / "corpus.jsonl", spec), spec


def _cmd_gen_corpus(args) -> int:
    marginals = [float(x) for x in args.marginals.split(",")]
    corpus = generate_corpus(
        n=args.n,
        dim=args.dim,
        group_marginals=marginals,
        groupless_fraction=args.groupless_fraction,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_spec(corpus.spec, out / "spec.json")
    save_corpus(corpus, out / "corpus.jsonl")
    print(f"wrote {len(corpus)} items to {out / 'corpus.jsonl'}")
    return 0


def _cmd_index(args) -> int:
    corpus, spec = _load_corpus_dir(args.corpus)
    started = time.perf_counter()
    index = build_index(corpus)
    elapsed = time.perf_counter() - started
    group_tokens = sum(1 for t in index.postings if t.startswith("__group:"))
    print(f"items: {len(corpus)}")
    print(f"tokens: {len(index.postings)} ({group_tokens} group tokens)")
    print(f"groups: {', '.join(spec.groups)}")
    print(f"build time: {elapsed * 1000:.1f} ms")
    return 0


def _cmd_query(args) -> int:
    corpus, spec = _load_corpus_dir(args.corpus)
    if args.mode == "token":
        if not args.squery:
            raise ConfigError("token mode requires --squery")
        node = parse_squery(args.squery)
        index = build_index(corpus)
        result = evaluate(index, node, None if isinstance(node, StrongOr) else args.k)
        for item_id in result.main[: args.k]:
            group = corpus.group_of(item_id)
            label = "-" if group is None else spec.groups[group]
            print(f"{item_id}\t{label}")
        for child, bucket in result.buckets.items():
            if bucket:
                print(f"# bucket[child {child}]: {bucket}")
        return 0
    if args.item_id is None:
        raise ConfigError("embedding mode requires --item-id")
    query = corpus.item(args.item_id).embedding
    result = bucketized_knn(
        corpus, AnnTopology(args.leaves, args.segments_per_leaf), query, args.k, 0
    )
    ranked = score_by_query(corpus, query, [nb.item_id for nb in result.main])
    for entry in ranked.entries:
        label = "-" if entry.group is None else spec.groups[entry.group]
        print(f"{entry.item_id}\t{label}\t{entry.utility:.4f}")
    return 0


def _cmd_experiment(args) -> int:
    corpus, spec = _load_corpus_dir(args.corpus)
    try:
        plan = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid config file: {exc}") from None
    defaults = {
        key: plan[key]
        for key in ("k", "k_eval", "trigger", "surface", "seed")
        if key in plan
    }
    configs = [config_from_dict(entry, defaults) for entry in plan.get("configs", [])]
    if not configs:
        raise ConfigError("config file defines no configurations")
    topo_data = plan.get("topology", {})
    topology = AnnTopology(
        leaves=int(topo_data.get("leaves", 1)),
        segments_per_leaf=int(topo_data.get("segments_per_leaf", 1)),
    )
    query_plan = plan.get("queries", {})
    queries = generate_queries(
        corpus,
        count=int(query_plan.get("count", 100)),
        seed=int(query_plan.get("seed", 0)),
        categories=query_plan.get("categories"),
        perturbation=float(query_plan.get("perturbation", 0.15)),
    )
    dump = Path(args.out) / "sequences.json" if args.dump_sequences else None
    report = run_experiment(
        corpus, configs, queries, topology=topology, dump_sequences_to=dump
    )
    report.save(args.out)
    print(report.to_text())
    print(f"\nreports written to {args.out}")
    return 0


def _bench_kernel(n: int, window: int, batch: int, repeats: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    groups = rng.integers(0, 4, size=n)
    sim = np.where(groups[:, None] == groups[None, :], 1.0, 0.3)
    sim += 1e-6 * np.eye(n)
    utilities = np.sort(rng.uniform(0.0, 1.0, size=n))[::-1].copy()

    print(f"greedy selection over n={n}, window={window}, batch={batch}")
    print(f"active backend: {_kernels.ACTIVE_BACKEND}")
    reference = None
    for name, kernel in _kernels.backends().items():
        best = min(
            _timed(kernel, sim, utilities, 0.5, window, batch)
            for _ in range(repeats)
        )
        result = kernel(sim, utilities, 0.5, window, batch)
        if reference is None:
            reference = result
        agreement = "ok" if result == reference else "MISMATCH"
        print(f"  {name:>8}: {best * 1000:8.3f} ms   (selections {agreement})")


def _timed(kernel, *args) -> float:
    started = time.perf_counter()
    kernel(*args)
    return time.perf_counter() - started


def _cmd_bench(args) -> int:
    _bench_kernel(args.n, args.window, args.batch, args.repeats, args.seed)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divsearch",
        description="Diversity-aware retrieval and re-ranking pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    gen.add_argument("--n", type=int, default=10000)
    gen.add_argument("--dim", type=int, default=64)
    gen.add_argument("--marginals", default="0.7,0.15,0.1,0.05")
    gen.add_argument("--groupless-fraction", type=float, default=0.2)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_gen_corpus)

    idx = sub.add_parser("index", help="build indices and print stats")
    idx.add_argument("--corpus", required=True)
    idx.set_defaults(func=_cmd_index)

    qry = sub.add_parser("query", help="run a single query")
    qry.add_argument("--corpus", required=True)
    qry.add_argument("--mode", choices=["token", "embedding"], default="embedding")
    qry.add_argument("--squery", help="s-query text, e.g. SOR(K=10; a, b{min=3})")
    qry.add_argument("--item-id", type=int, help="query by this item's embedding")
    qry.add_argument("--k", type=int, default=10)
    qry.add_argument("--leaves", type=int, default=1)
    qry.add_argument("--segments-per-leaf", type=int, default=1)
    qry.set_defaults(func=_cmd_query)

    exp = sub.add_parser("experiment", help="run a config file")
    exp.add_argument("--corpus", required=True)
    exp.add_argument("--config", required=True)
    exp.add_argument("--out", required=True)
    exp.add_argument("--dump-sequences", action="store_true")
    exp.set_defaults(func=_cmd_experiment)

    bench = sub.add_parser("bench", help="kernel latency, compiled vs python")
    bench.add_argument("--n", type=int, default=400)
    bench.add_argument("--window", type=int, default=8)
    bench.add_argument("--batch", type=int, default=200)
    bench.add_argument("--repeats", type=int, default=20)
    bench.add_argument("--seed", type=int, default=0)
    bench.set_defaults(func=_cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivsearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
