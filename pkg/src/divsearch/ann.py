"""Simulated distributed nearest-neighbor retrieval with per-group buckets.

The index is a root -> leaves -> segments scatter-gather; segments run exact
cosine-distance scans over their shard, and every aggregation level keeps the
global top-K alongside per-group top-K_d buckets so minority-group candidates
survive the merges. Sharding is by id hash, so results are independent of the
topology.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from divsearch.core import Corpus, DiversitySpec, GroupId, Item
from divsearch.errors import ConfigError, DimensionError

_MIX_CONST = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def _splitmix64(value: int) -> int:
    """Deterministic 64-bit mix, stable across platforms and runs."""
    value = (value + _MIX_CONST) & _MASK64
    value = ((value ^ (value >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    value = ((value ^ (value >> 27)) * 0x94D049BB133111EB) & _MASK64
    return value ^ (value >> 31)


def _splitmix64_array(values: np.ndarray) -> np.ndarray:
    """Vectorized twin of _splitmix64; must produce identical values."""
    with np.errstate(over="ignore"):
        v = values.astype(np.uint64) + np.uint64(_MIX_CONST)
        v = (v ^ (v >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        v = (v ^ (v >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return v ^ (v >> np.uint64(31))


@dataclass(frozen=True)
class AnnTopology:
    """Scatter-gather fan-out: L leaves, M segments per leaf."""

    leaves: int = 1
    segments_per_leaf: int = 1

    def __post_init__(self):
        if self.leaves < 1 or self.segments_per_leaf < 1:
            raise ConfigError("topology needs at least one leaf and one segment")

    def assign(self, item_id: int) -> tuple[int, int]:
        mixed = _splitmix64(int(item_id))
        return mixed % self.leaves, (mixed >> 32) % self.segments_per_leaf


@dataclass(frozen=True)
class Neighbor:
    item_id: int
    distance: float
    group: GroupId | None


@dataclass
class BucketedCandidates:
    """Distance-ascending main results plus per-group buckets."""

    main: list[Neighbor]
    buckets: dict[GroupId, list[Neighbor]]


@dataclass(frozen=True)
class OverfetchConfig:
    """Neighborhood expansion bounds for overfetch-and-rerank."""

    k: int
    k_min: int = 1
    k_max: int | None = None
    growth: float = 2.0

    def __post_init__(self):
        if self.k < 1 or self.k_min < 0:
            raise ConfigError("k must be >= 1 and k_min >= 0")
        if self.k_max is None:
            object.__setattr__(self, "k_max", 2 * self.k)
        if self.k > self.k_max:
            raise ConfigError(f"k={self.k} exceeds k_max={self.k_max}")
        if self.growth <= 1.0:
            raise ConfigError(f"growth must exceed 1, got {self.growth}")

    def validate_for(self, spec: DiversitySpec) -> None:
        if self.k_min * spec.num_groups > self.k_max:
            raise ConfigError(
                f"k_min={self.k_min} over {spec.num_groups} groups cannot fit k_max={self.k_max}"
            )


def _sort_key(neighbors: list[Neighbor]) -> list[Neighbor]:
    return sorted(neighbors, key=lambda nb: (nb.distance, nb.item_id))


def _unit_query(query: np.ndarray, dim: int) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (dim,):
        raise DimensionError(f"query dim {query.shape} != ({dim},)")
    norm = float(np.linalg.norm(query))
    if norm == 0.0:
        raise ConfigError("query embedding has zero norm")
    return query / norm


def _search_rows(
    ids: np.ndarray,
    embeddings: np.ndarray,
    groups: np.ndarray,
    unit_query: np.ndarray,
    k: int,
    k_per_group: int,
    num_groups: int,
) -> BucketedCandidates:
    """Exact scan of one shard: top-k overall plus per-group top-k_per_group."""
    if len(ids) == 0:
        return BucketedCandidates(main=[], buckets={g: [] for g in range(num_groups)})
    distances = 1.0 - embeddings @ unit_query

    def top(row_subset: np.ndarray, count: int) -> list[Neighbor]:
        if count <= 0 or len(row_subset) == 0:
            return []
        sub_d = distances[row_subset]
        sub_i = ids[row_subset]
        if count < len(row_subset):
            part = np.argpartition(sub_d, count - 1)[:count]
            row_subset = row_subset[part]
            sub_d = sub_d[part]
            sub_i = sub_i[part]
        order = np.lexsort((sub_i, sub_d))
        return [
            Neighbor(
                item_id=int(ids[row_subset[j]]),
                distance=float(distances[row_subset[j]]),
                group=None if groups[row_subset[j]] < 0 else int(groups[row_subset[j]]),
            )
            for j in order
        ]

    all_rows = np.arange(len(ids))
    main = top(all_rows, min(k, len(ids)))
    buckets = {
        g: top(np.flatnonzero(groups == g), k_per_group) for g in range(num_groups)
    }
    return BucketedCandidates(main=main, buckets=buckets)


def segment_search(
    items: Sequence[Item],
    query: np.ndarray,
    k: int,
    k_per_group: int,
    spec: DiversitySpec,
) -> BucketedCandidates:
    """Exact cosine-distance scan of a segment's items."""
    if not items:
        return BucketedCandidates(
            main=[], buckets={g: [] for g in range(spec.num_groups)}
        )
    ids = np.array([it.id for it in items], dtype=np.int64)
    embeddings = np.stack([np.asarray(it.embedding, dtype=np.float64) for it in items])
    groups = np.array(
        [-1 if it.group is None else it.group for it in items], dtype=np.int64
    )
    unit_query = _unit_query(query, embeddings.shape[1])
    return _search_rows(ids, embeddings, groups, unit_query, k, k_per_group, spec.num_groups)


def aggregate(
    children: Sequence[BucketedCandidates], k: int, k_per_group: int
) -> BucketedCandidates:
    """Merge child results: global top-k and per-group top-k_per_group.

    Children's buckets feed the merged main pool as well, so a group's best
    candidates are never dropped by the overall cut. Deduplication is by id;
    order is independent of child arrival order.
    """
    seen: dict[int, Neighbor] = {}
    group_keys: set[GroupId] = set()
    for child in children:
        group_keys.update(child.buckets.keys())
        for nb in child.main:
            seen.setdefault(nb.item_id, nb)
        for bucket in child.buckets.values():
            for nb in bucket:
                seen.setdefault(nb.item_id, nb)
    pool = _sort_key(list(seen.values()))
    buckets = {
        g: [nb for nb in pool if nb.group == g][:k_per_group] for g in group_keys
    }
    return BucketedCandidates(main=pool[:k], buckets=buckets)


# shard layouts are query-independent; cache them per corpus and topology
_PARTITION_CACHE: "weakref.WeakKeyDictionary[Corpus, dict]" = weakref.WeakKeyDictionary()


def _partition_rows(corpus: Corpus, topology: AnnTopology) -> dict[tuple[int, int], np.ndarray]:
    per_corpus = _PARTITION_CACHE.setdefault(corpus, {})
    cached = per_corpus.get(topology)
    if cached is not None:
        return cached
    mixed = _splitmix64_array(corpus.id_array)
    leaves = (mixed % np.uint64(topology.leaves)).astype(np.int64)
    segments = ((mixed >> np.uint64(32)) % np.uint64(topology.segments_per_leaf)).astype(np.int64)
    shards = {}
    for leaf in range(topology.leaves):
        for segment in range(topology.segments_per_leaf):
            rows = np.flatnonzero((leaves == leaf) & (segments == segment))
            if len(rows):
                shards[(leaf, segment)] = rows
    per_corpus[topology] = shards
    return shards


def bucketized_knn(
    corpus: Corpus,
    topology: AnnTopology,
    query: np.ndarray,
    k: int,
    k_per_group: int,
) -> BucketedCandidates:
    """Scatter-gather exact kNN keeping per-group buckets at every merge.

    With exact segment search the main list equals the true global top-k and
    each bucket equals the true global per-group top-k_per_group.
    """
    unit_query = _unit_query(query, corpus.embedding_dim)
    shards = _partition_rows(corpus, topology)
    num_groups = corpus.spec.num_groups
    leaf_results = []
    for leaf in range(topology.leaves):
        segment_results = []
        for segment in range(topology.segments_per_leaf):
            rows = shards.get((leaf, segment))
            if rows is None:
                continue
            segment_results.append(
                _search_rows(
                    corpus.id_array[rows],
                    corpus.embedding_matrix[rows],
                    corpus.group_array[rows],
                    unit_query,
                    k,
                    k_per_group,
                    num_groups,
                )
            )
        if segment_results:
            leaf_results.append(aggregate(segment_results, k, k_per_group))
    if not leaf_results:
        return BucketedCandidates(main=[], buckets={g: [] for g in range(num_groups)})
    return aggregate(leaf_results, k, k_per_group)


def overfetch_and_rerank(
    corpus: Corpus,
    topology: AnnTopology,
    query: np.ndarray,
    cfg: OverfetchConfig,
    spec: DiversitySpec,
    with_stats: bool = False,
):
    """Expand the fetched neighborhood until per-group minimums are met.

    Fetch sizes follow a geometric schedule capped at k_max; the final set is
    reduced back to k by round-robin over groups in ascending ordinal order,
    starting from the nearest candidate's group and taking nearest-first
    within each group. Group-less candidates cycle as one extra pseudo-group.
    Returns the selected ids; with_stats=True also returns the fetch schedule.
    """
    cfg.validate_for(spec)
    num_groups = spec.num_groups
    fetch_size = cfg.k
    schedule = [fetch_size]
    while True:
        fetched = bucketized_knn(corpus, topology, query, fetch_size, 0).main
        counts = [0] * num_groups
        for nb in fetched:
            if nb.group is not None:
                counts[nb.group] += 1
        if all(c >= cfg.k_min for c in counts) or fetch_size >= cfg.k_max:
            break
        fetch_size = min(math.ceil(cfg.growth * fetch_size), cfg.k_max)
        schedule.append(fetch_size)

    pseudo = num_groups  # cycle slot for group-less candidates
    queues: dict[int, list[Neighbor]] = {g: [] for g in range(num_groups + 1)}
    for nb in fetched:
        queues[pseudo if nb.group is None else nb.group].append(nb)

    selected: list[int] = []
    if fetched:
        start = pseudo if fetched[0].group is None else fetched[0].group
        cycle = [(start + offset) % (num_groups + 1) for offset in range(num_groups + 1)]
        heads = {g: 0 for g in cycle}
        while len(selected) < cfg.k and any(
            heads[g] < len(queues[g]) for g in cycle
        ):
            for g in cycle:
                if len(selected) >= cfg.k:
                    break
                if heads[g] < len(queues[g]):
                    selected.append(queues[g][heads[g]].item_id)
                    heads[g] += 1
    if with_stats:
        return selected, schedule
    return selected
