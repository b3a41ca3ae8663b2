"""End-to-end pipeline: trigger -> retrieve -> score -> diversify -> measure.

Also hosts the synthetic corpus/query generators and the experiment harness
that compares pipeline configurations against a control.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from divsearch.ann import AnnTopology, OverfetchConfig, bucketized_knn, overfetch_and_rerank
from divsearch.core import (
    Corpus,
    DiversitySpec,
    Item,
    RankedList,
    score_by_query,
)
from divsearch.errors import ConfigError
from divsearch.metrics import MetricReport, evaluate_rankings
from divsearch.rank import (
    DppConfig,
    EqualitySimilarity,
    ExhaustionPolicy,
    ExponentialSimilarity,
    IdentityTransform,
    LinearSimilarity,
    RbfTransform,
    RoundRobinConfig,
    dpp_rerank,
    round_robin,
)
from divsearch.token_index import (
    And,
    InvertedIndex,
    Or,
    Quota,
    StrongOr,
    Term,
    build_index,
    eval_strong_or,
    group_token,
    matches,
)

CATEGORIES = ("fashion", "beauty", "home_decor", "food", "travel")
DEFAULT_TRIGGER_CATEGORIES = frozenset({"fashion", "beauty"})


class Surface(str, Enum):
    SEARCH = "Search"
    RELATED_ITEMS = "RelatedItems"
    NEW_USER_FEED = "NewUserFeed"


class RetrievalMode(str, Enum):
    TOKEN_PLAIN = "TokenPlain"
    TOKEN_STRONG_OR = "TokenStrongOr"
    EMB_PLAIN = "EmbPlain"
    EMB_BUCKETIZED = "EmbBucketized"
    EMB_OVERFETCH = "EmbOverfetch"


class RankerKind(str, Enum):
    UTILITY_ONLY = "UtilityOnly"
    ROUND_ROBIN = "RoundRobin"
    DPP = "Dpp"


@dataclass(frozen=True)
class TriggerRule:
    """Which query categories enable diversification on a surface."""

    categories: frozenset[str]
    surface: Surface = Surface.SEARCH

    def __post_init__(self):
        object.__setattr__(self, "categories", frozenset(self.categories))
        if not self.categories:
            raise ConfigError("trigger rule needs at least one category")


def should_trigger(category: str, rule: TriggerRule) -> bool:
    """True iff the query category is covered by the rule."""
    return category in rule.categories


@dataclass(frozen=True)
class PipelineConfig:
    name: str = "default"
    surface: Surface = Surface.SEARCH
    retrieval: RetrievalMode = RetrievalMode.EMB_PLAIN
    ranker: RankerKind = RankerKind.UTILITY_ONLY
    k: int = 100
    k_eval: int = 10
    trigger: TriggerRule = field(
        default_factory=lambda: TriggerRule(DEFAULT_TRIGGER_CATEGORIES)
    )
    seed: int = 0
    round_robin: RoundRobinConfig = field(default_factory=RoundRobinConfig)
    dpp: DppConfig = field(default_factory=DppConfig)
    bucket_k: int = 10
    strong_or_min: int = 1
    overfetch: OverfetchConfig | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.k_eval < 1:
            raise ConfigError(f"k_eval must be >= 1, got {self.k_eval}")


@dataclass(frozen=True)
class Query:
    query_id: str
    embedding: np.ndarray | None
    tokens: tuple[str, ...]
    category: str


@dataclass
class StageLatency:
    mean_ms: float
    p99_ms: float


@dataclass
class LatencyStats:
    stages: dict[str, StageLatency]

    def to_dict(self) -> dict:
        return {
            stage: {"mean_ms": lat.mean_ms, "p99_ms": lat.p99_ms}
            for stage, lat in self.stages.items()
        }


def _latency(samples: dict[str, list[float]]) -> LatencyStats:
    stages = {}
    for stage, values in samples.items():
        arr = np.array(values) * 1000.0
        stages[stage] = StageLatency(
            mean_ms=float(arr.mean()), p99_ms=float(np.percentile(arr, 99))
        )
    return LatencyStats(stages=stages)


def generate_corpus(
    n: int,
    dim: int,
    group_marginals: Sequence[float],
    groupless_fraction: float,
    seed: int,
    spec: DiversitySpec | None = None,
    cluster_separation: float = 0.3,
) -> Corpus:
    """Deterministic synthetic corpus with group-conditioned embeddings.

    Embeddings mix a shared background direction, a per-group cluster center
    scaled by cluster_separation, and isotropic noise, then are normalized;
    groups therefore overlap in embedding space. Tokens come from a
    category-specific vocabulary plus the synthetic group token.
    """
    marginals = np.asarray(group_marginals, dtype=np.float64)
    if abs(marginals.sum() - 1.0) > 1e-9 or (marginals < 0).any():
        raise ConfigError("group marginals must be non-negative and sum to 1")
    if not 0.0 <= groupless_fraction <= 1.0:
        raise ConfigError("groupless_fraction must be in [0, 1]")
    if spec is None:
        spec = DiversitySpec(
            dimension_name="tone",
            groups=tuple(f"d{i + 1}" for i in range(len(marginals))),
            ordinal=True,
        )
    if spec.num_groups != len(marginals):
        raise ConfigError("one marginal per group required")
    if n < 1 or dim < 2:
        raise ConfigError("need n >= 1 and dim >= 2")

    rng = np.random.default_rng(seed)

    def unit_rows(count: int) -> np.ndarray:
        rows = rng.standard_normal((count, dim))
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)

    background = unit_rows(1)[0]
    centers = unit_rows(spec.num_groups)

    groups = np.full(n, -1, dtype=np.int64)
    grouped_mask = rng.random(n) >= groupless_fraction
    groups[grouped_mask] = rng.choice(spec.num_groups, size=int(grouped_mask.sum()), p=marginals)

    noise = rng.standard_normal((n, dim)) / np.sqrt(dim)
    emb = background + noise
    for g in range(spec.num_groups):
        emb[groups == g] += cluster_separation * centers[g]
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)

    vocab = {
        cat: [f"{cat}_w{i}" for i in range(40)] for cat in CATEGORIES
    }
    categories = rng.choice(len(CATEGORIES), size=n)
    items = []
    for row in range(n):
        category = CATEGORIES[categories[row]]
        count = int(rng.integers(4, 9))
        tokens = set(rng.choice(vocab[category], size=count, replace=False))
        if groups[row] >= 0:
            tokens.add(group_token(spec.groups[groups[row]]))
        items.append(
            Item(
                id=row + 1,
                embedding=emb[row],
                tokens=frozenset(tokens),
                group=None if groups[row] < 0 else int(groups[row]),
                category=category,
            )
        )
    return Corpus(items, spec)


def generate_queries(
    corpus: Corpus,
    count: int,
    seed: int,
    categories: Sequence[str] | None = None,
    perturbation: float = 0.15,
    token_count: int = 3,
) -> list[Query]:
    """Queries as perturbed item embeddings plus token subsets, seeded."""
    rng = np.random.default_rng(seed)
    eligible_rows = [
        row
        for row, item_id in enumerate(corpus.id_array)
        if categories is None or corpus.item(int(item_id)).category in categories
    ]
    if not eligible_rows:
        raise ConfigError("no corpus items in the requested categories")
    queries = []
    dim = corpus.embedding_dim
    for i in range(count):
        row = eligible_rows[int(rng.integers(len(eligible_rows)))]
        item = corpus.item(int(corpus.id_array[row]))
        vec = item.embedding + perturbation * rng.standard_normal(dim) / np.sqrt(dim)
        vec = vec / np.linalg.norm(vec)
        plain_tokens = sorted(
            t for t in item.tokens if not t.startswith("__group:")
        )
        take = min(token_count, len(plain_tokens))
        chosen = (
            list(rng.choice(plain_tokens, size=take, replace=False)) if take else []
        )
        queries.append(
            Query(
                query_id=f"q{i:05d}",
                embedding=vec,
                tokens=tuple(chosen),
                category=item.category,
            )
        )
    return queries


def _stable_seed(base: int, query_id: str) -> int:
    digest = hashlib.blake2s(query_id.encode(), digest_size=8).digest()
    return (base ^ int.from_bytes(digest, "big")) & ((1 << 63) - 1)


def _strong_or_query(tokens: Sequence[str], spec: DiversitySpec, cfg: PipelineConfig) -> StrongOr:
    """Token disjunction plus one quota child per group (topic AND group)."""
    terms: tuple = tuple(Term(t) for t in tokens)
    topic = Or(terms) if len(terms) > 1 else terms[0]
    children: list = list(terms)
    quotas: list[Quota | None] = [None] * len(terms)
    for label in spec.groups:
        children.append(And((topic, Term(group_token(label)))))
        quotas.append(Quota(min_count=cfg.strong_or_min))
    return StrongOr(tuple(children), tuple(quotas), cfg.k)


def _retrieve(
    query: Query,
    cfg: PipelineConfig,
    corpus: Corpus,
    token_index: InvertedIndex | None,
    topology: AnnTopology,
) -> list[int]:
    mode = cfg.retrieval
    if mode in (RetrievalMode.TOKEN_PLAIN, RetrievalMode.TOKEN_STRONG_OR):
        if token_index is None:
            raise ConfigError("token retrieval requires a token index")
        if not query.tokens:
            return []
        if mode is RetrievalMode.TOKEN_PLAIN:
            return matches(token_index, Or(tuple(Term(t) for t in query.tokens)))[: cfg.k]
        result = eval_strong_or(token_index, _strong_or_query(query.tokens, corpus.spec, cfg))
        pool = list(result.main)
        seen = set(pool)
        for bucket in result.buckets.values():
            for item_id in bucket:
                if item_id not in seen:
                    seen.add(item_id)
                    pool.append(item_id)
        return pool
    if query.embedding is None:
        raise ConfigError(f"query {query.query_id} has no embedding")
    if mode is RetrievalMode.EMB_PLAIN:
        return [nb.item_id for nb in bucketized_knn(corpus, topology, query.embedding, cfg.k, 0).main]
    if mode is RetrievalMode.EMB_BUCKETIZED:
        result = bucketized_knn(corpus, topology, query.embedding, cfg.k, cfg.bucket_k)
        pool = [nb.item_id for nb in result.main]
        seen = set(pool)
        for bucket in result.buckets.values():
            for nb in bucket:
                if nb.item_id not in seen:
                    seen.add(nb.item_id)
                    pool.append(nb.item_id)
        return pool
    if mode is RetrievalMode.EMB_OVERFETCH:
        overfetch = cfg.overfetch or OverfetchConfig(k=cfg.k)
        return overfetch_and_rerank(corpus, topology, query.embedding, overfetch, corpus.spec)
    raise ConfigError(f"unknown retrieval mode {mode!r}")


def run_pipeline(
    corpus: Corpus,
    cfg: PipelineConfig,
    queries: Sequence[Query],
    token_index: InvertedIndex | None = None,
    topology: AnnTopology | None = None,
) -> tuple[list[RankedList], LatencyStats]:
    """Run trigger -> retrieve -> score -> diversify for every query."""
    spec = corpus.spec
    if cfg.k_eval < spec.num_groups:
        raise ConfigError(
            f"k_eval={cfg.k_eval} is below the {spec.num_groups}-group dimension"
        )
    if topology is None:
        topology = AnnTopology(1, 1)
    if token_index is None and cfg.retrieval in (
        RetrievalMode.TOKEN_PLAIN,
        RetrievalMode.TOKEN_STRONG_OR,
    ):
        token_index = build_index(corpus)

    rankings: list[RankedList] = []
    samples: dict[str, list[float]] = {"retrieval": [], "scoring": [], "ranking": []}
    for query in queries:
        t0 = time.perf_counter()
        pool = _retrieve(query, cfg, corpus, token_index, topology)
        t1 = time.perf_counter()
        if query.embedding is not None and pool:
            ranked = score_by_query(corpus, query.embedding, pool, query.query_id)
        else:
            ranked = RankedList(
                entries=[], query_id=query.query_id
            )
        t2 = time.perf_counter()
        if ranked.entries and should_trigger(query.category, cfg.trigger):
            if cfg.ranker is RankerKind.ROUND_ROBIN:
                rr_cfg = cfg.round_robin
                if rr_cfg.randomize_window:
                    rr_cfg = RoundRobinConfig(
                        score_threshold=rr_cfg.score_threshold,
                        randomize_window=True,
                        exhaustion_policy=rr_cfg.exhaustion_policy,
                        rng_seed=_stable_seed(rr_cfg.rng_seed, query.query_id),
                    )
                ranked = round_robin(ranked, spec, rr_cfg)
            elif cfg.ranker is RankerKind.DPP:
                ranked = dpp_rerank(ranked, spec, cfg.dpp)
        t3 = time.perf_counter()
        samples["retrieval"].append(t1 - t0)
        samples["scoring"].append(t2 - t1)
        samples["ranking"].append(t3 - t2)
        rankings.append(ranked)
    return rankings, _latency(samples)


@dataclass
class ExperimentReport:
    """Per-configuration metrics, deltas vs. control, and latency stats."""

    control: str
    query_count: int
    k_eval: int
    reports: dict[str, MetricReport]
    deltas: dict[str, dict[str, float | None]]
    latencies: dict[str, LatencyStats]

    def to_dict(self) -> dict:
        return {
            "control": self.control,
            "query_count": self.query_count,
            "k_eval": self.k_eval,
            "reports": {name: rep.to_dict() for name, rep in self.reports.items()},
            "deltas": self.deltas,
            "latencies": {name: lat.to_dict() for name, lat in self.latencies.items()},
        }

    def to_text(self) -> str:
        headers = [
            "config",
            f"div@{self.k_eval}",
            "equit.",
            f"mean_u@{self.k_eval}",
            "d_div%",
            "d_util%",
            "lat_ms",
        ]
        rows = [headers]
        for name, rep in self.reports.items():
            delta = self.deltas[name]
            total_ms = sum(s.mean_ms for s in self.latencies[name].stages.values())
            rows.append(
                [
                    name,
                    f"{rep.div_at_k:.4f}",
                    f"{rep.equitability:.4f}",
                    f"{rep.mean_utility_at_k:.4f}",
                    _fmt_pct(delta["div_at_k"]),
                    _fmt_pct(delta["mean_utility_at_k"]),
                    f"{total_ms:.2f}",
                ]
            )
        widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
        lines = [
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row))
            for row in rows
        ]
        lines.insert(1, "-" * len(lines[0]))
        lines.append("")
        lines.append(
            f"control={self.control}  queries={self.query_count}  "
            "(deltas are relative to control)"
        )
        return "\n".join(lines)

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        (out / "report.txt").write_text(self.to_text() + "\n")


def _parse_enum(enum_cls, value, what: str):
    try:
        return enum_cls(value)
    except ValueError:
        options = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"unknown {what} {value!r}; expected one of: {options}") from None


def _parse_similarity(data: dict):
    kind = data.get("type", "Linear")
    if kind == "Equality":
        return EqualitySimilarity(off_diag=float(data.get("off_diag", 0.0)))
    if kind == "Linear":
        return LinearSimilarity()
    if kind == "Exponential":
        return ExponentialSimilarity(alpha=float(data.get("alpha", 0.7)))
    raise ConfigError(f"unknown similarity type {kind!r}")


def _parse_transform(data: dict):
    kind = data.get("type", "Identity")
    if kind == "Identity":
        return IdentityTransform()
    if kind == "Rbf":
        return RbfTransform(sigma=float(data.get("sigma", 0.5)))
    raise ConfigError(f"unknown kernel transform {kind!r}")


def _parse_dpp(data: dict) -> DppConfig:
    return DppConfig(
        theta=float(data.get("theta", 1.0)),
        window=int(data.get("window", 4)),
        batch_size=int(data.get("batch_size", 50)),
        depth=int(data.get("depth", 100)),
        score_threshold=(
            None
            if data.get("score_threshold") is None
            else float(data["score_threshold"])
        ),
        kernel_transform=_parse_transform(data.get("kernel_transform", {})),
        similarity=_parse_similarity(data.get("similarity", {})),
        jitter=float(data.get("jitter", 1e-6)),
        num_batches=int(data.get("num_batches", 1)),
    )


def _parse_round_robin(data: dict) -> RoundRobinConfig:
    return RoundRobinConfig(
        score_threshold=float(data.get("score_threshold", 0.0)),
        randomize_window=bool(data.get("randomize_window", False)),
        exhaustion_policy=_parse_enum(
            ExhaustionPolicy, data.get("exhaustion_policy", "Skip"), "exhaustion policy"
        ),
        rng_seed=int(data.get("rng_seed", 0)),
    )


def config_from_dict(data: dict, defaults: dict | None = None) -> PipelineConfig:
    """Build a PipelineConfig from the JSON schema used by the CLI."""
    merged = dict(defaults or {})
    merged.update(data)
    trigger_data = merged.get("trigger", {})
    trigger = TriggerRule(
        categories=frozenset(
            trigger_data.get("categories", DEFAULT_TRIGGER_CATEGORIES)
        ),
        surface=_parse_enum(
            Surface, trigger_data.get("surface", "Search"), "surface"
        ),
    )
    k = int(merged.get("k", 100))
    overfetch = None
    if "overfetch" in merged:
        ov = merged["overfetch"]
        overfetch = OverfetchConfig(
            k=k,
            k_min=int(ov.get("k_min", 1)),
            k_max=None if ov.get("k_max") is None else int(ov["k_max"]),
            growth=float(ov.get("growth", 2.0)),
        )
    return PipelineConfig(
        name=str(merged.get("name", "default")),
        surface=_parse_enum(Surface, merged.get("surface", "Search"), "surface"),
        retrieval=_parse_enum(
            RetrievalMode, merged.get("retrieval", "EmbPlain"), "retrieval mode"
        ),
        ranker=_parse_enum(RankerKind, merged.get("ranker", "UtilityOnly"), "ranker"),
        k=k,
        k_eval=int(merged.get("k_eval", 10)),
        trigger=trigger,
        seed=int(merged.get("seed", 0)),
        round_robin=_parse_round_robin(merged.get("round_robin", {})),
        dpp=_parse_dpp(merged.get("dpp", {})),
        bucket_k=int(merged.get("bucket_k", 10)),
        strong_or_min=int(merged.get("strong_or_min", 1)),
        overfetch=overfetch,
    )


def _fmt_pct(value: float | None) -> str:
    return "n/a" if value is None else f"{100.0 * value:+.2f}%"


def _relative_delta(treatment: float, control: float) -> float | None:
    if control == 0:
        return None
    return (treatment - control) / control


def run_experiment(
    corpus: Corpus,
    configs: Sequence[PipelineConfig],
    queries: Sequence[Query],
    topology: AnnTopology | None = None,
    dump_sequences_to: str | Path | None = None,
) -> ExperimentReport:
    """Run each config over identical queries; the first config is control."""
    if not configs:
        raise ConfigError("experiment needs at least one configuration")
    names = [cfg.name for cfg in configs]
    if len(set(names)) != len(names):
        raise ConfigError("configuration names must be unique")
    if len({cfg.k_eval for cfg in configs}) != 1 or len({cfg.k for cfg in configs}) != 1:
        raise ConfigError("all configurations must share k and k_eval")

    token_index = None
    if any(
        cfg.retrieval in (RetrievalMode.TOKEN_PLAIN, RetrievalMode.TOKEN_STRONG_OR)
        for cfg in configs
    ):
        token_index = build_index(corpus)

    k_eval = configs[0].k_eval
    reports: dict[str, MetricReport] = {}
    latencies: dict[str, LatencyStats] = {}
    sequences: dict[str, dict[str, list[str | None]]] = {}
    for cfg in configs:
        rankings, latency = run_pipeline(
            corpus, cfg, queries, token_index=token_index, topology=topology
        )
        reports[cfg.name] = evaluate_rankings(rankings, corpus.spec, k_eval)
        latencies[cfg.name] = latency
        if dump_sequences_to is not None:
            sequences[cfg.name] = {
                r.query_id: [
                    None if g is None else corpus.spec.groups[g]
                    for g in r.groups()[:k_eval]
                ]
                for r in rankings
            }

    control = reports[names[0]]
    deltas = {
        name: {
            "div_at_k": _relative_delta(rep.div_at_k, control.div_at_k),
            "equitability": _relative_delta(rep.equitability, control.equitability),
            "mean_utility_at_k": _relative_delta(
                rep.mean_utility_at_k, control.mean_utility_at_k
            ),
        }
        for name, rep in reports.items()
    }
    report = ExperimentReport(
        control=names[0],
        query_count=len(queries),
        k_eval=k_eval,
        reports=reports,
        deltas=deltas,
        latencies=latencies,
    )
    if dump_sequences_to is not None:
        path = Path(dump_sequences_to)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(sequences, indent=2) + "\n")
    return report
