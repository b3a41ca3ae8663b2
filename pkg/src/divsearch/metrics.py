"""Diversity and utility metrics over ranked lists.

The headline metric is the fraction of queries whose top-k group-bearing
results contain every group of the diversity dimension. Entries without a
group do not count toward the prefix.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

from divsearch.core import DiversitySpec, GroupId, RankedList
from divsearch.errors import ConfigError, EmptyInputError


def _group_prefix(ranking: RankedList, k: int) -> list[GroupId]:
    """First k groups among the group-bearing entries, in rank order."""
    prefix = []
    for entry in ranking.entries:
        if entry.group is None:
            continue
        prefix.append(entry.group)
        if len(prefix) == k:
            break
    return prefix


def div_at_k(rankings: Sequence[RankedList], spec: DiversitySpec, k: int) -> float:
    """Fraction of queries whose top-k group-bearing results cover all groups.

    Queries with fewer than k group-bearing entries are evaluated over what
    exists rather than discarded.
    """
    if k < spec.num_groups:
        raise ConfigError(
            f"k={k} < {spec.num_groups} groups: the metric could never reach 1"
        )
    if not rankings:
        raise EmptyInputError("no rankings to evaluate")
    wanted = set(range(spec.num_groups))
    hits = sum(1 for r in rankings if wanted.issubset(_group_prefix(r, k)))
    return hits / len(rankings)


def shannon_equitability(group_counts: Sequence[int]) -> float:
    """Entropy of the group distribution normalized by the uniform maximum.

    1.0 means all groups are equally represented; 0.0 means a single group
    holds everything. A one-group distribution is defined as perfectly
    equitable.
    """
    counts = [int(c) for c in group_counts]
    if any(c < 0 for c in counts):
        raise ConfigError("negative group count")
    total = sum(counts)
    if total == 0:
        raise EmptyInputError("all group counts are zero")
    if len(counts) == 1:
        return 1.0
    entropy = -sum(
        (c / total) * math.log(c / total) for c in counts if c > 0
    )
    return entropy / math.log(len(counts))


def mean_utility_at_k(ranking: RankedList, k: int) -> float:
    """Arithmetic mean utility over the first min(k, len) entries."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if not ranking.entries:
        raise EmptyInputError("empty ranking")
    head = ranking.entries[: min(k, len(ranking.entries))]
    return sum(e.utility for e in head) / len(head)


@dataclass
class MetricReport:
    """Evaluation summary for one pipeline configuration."""

    div_at_k: float
    k: int
    queries_counted: int
    queries_skipped: int
    equitability: float
    mean_utility_at_k: float
    per_group_counts: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_rankings(
    rankings: Sequence[RankedList], spec: DiversitySpec, k: int
) -> MetricReport:
    """Build a MetricReport over a batch of rankings at depth k."""
    if k < spec.num_groups:
        raise ConfigError(
            f"k={k} < {spec.num_groups} groups: the metric could never reach 1"
        )
    if not rankings:
        raise EmptyInputError("no rankings to evaluate")
    wanted = set(range(spec.num_groups))
    hits = 0
    counted = 0
    skipped = 0
    per_group = [0] * spec.num_groups
    utility_sum = 0.0
    for ranking in rankings:
        prefix = _group_prefix(ranking, k)
        if len(prefix) >= k:
            counted += 1
        else:
            skipped += 1
        if wanted.issubset(prefix):
            hits += 1
        for g in prefix:
            per_group[g] += 1
        utility_sum += mean_utility_at_k(ranking, k) if ranking.entries else 0.0
    equitability = (
        shannon_equitability(per_group) if sum(per_group) > 0 else 0.0
    )
    return MetricReport(
        div_at_k=hits / len(rankings),
        k=k,
        queries_counted=counted,
        queries_skipped=skipped,
        equitability=equitability,
        mean_utility_at_k=utility_sum / len(rankings),
        per_group_counts=per_group,
    )
