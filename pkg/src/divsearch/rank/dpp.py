"""Windowed greedy DPP re-ranking.

The kernel over a candidate set is L = U S U^T with U = diag(e^{theta*u_i}),
so maximizing log det(L_Y) greedily reduces to maximizing
2*theta*u_y + log det(S_{W + y}) per step, where W is the repulsion window of
the most recent selections. S encodes pairwise group similarity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from divsearch._kernels import greedy_select
from divsearch.core import DiversitySpec, GroupId, RankedList
from divsearch.errors import ConfigError, EmptyInputError, NumericalError

TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class EqualitySimilarity:
    """Same group -> 1, different group -> off_diag."""

    off_diag: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.off_diag < 1.0:
            raise ConfigError(f"off_diag must be in [0, 1), got {self.off_diag}")


@dataclass(frozen=True)
class LinearSimilarity:
    """1 - ordinal distance / (num_groups - 1)."""


@dataclass(frozen=True)
class ExponentialSimilarity:
    """exp(-alpha * ordinal distance)."""

    alpha: float = 0.7

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class IdentityTransform:
    """Leave similarity values untouched."""


@dataclass(frozen=True)
class RbfTransform:
    """exp(-(1 - s)^2 / (2 sigma^2)) applied to similarity values."""

    sigma: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")


Similarity = Union[EqualitySimilarity, LinearSimilarity, ExponentialSimilarity]
KernelTransform = Union[IdentityTransform, RbfTransform]


@dataclass(frozen=True)
class DppConfig:
    theta: float = 1.0
    window: int = 4
    batch_size: int = 50
    depth: int = 100
    score_threshold: float | None = None
    kernel_transform: KernelTransform = field(default_factory=IdentityTransform)
    similarity: Similarity = field(default_factory=LinearSimilarity)
    jitter: float = 1e-6
    num_batches: int = 1

    def __post_init__(self):
        if self.theta < 0.0:
            raise ConfigError(f"theta must be >= 0, got {self.theta}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.batch_size < 1 or self.depth < 1:
            raise ConfigError("batch_size and depth must be positive")
        if self.batch_size > self.depth:
            raise ConfigError(
                f"batch_size {self.batch_size} exceeds depth {self.depth}"
            )
        if not 0.0 < self.jitter <= 1e-3:
            raise ConfigError(f"jitter must be in (0, 1e-3], got {self.jitter}")
        if self.num_batches < 1:
            raise ConfigError(f"num_batches must be >= 1, got {self.num_batches}")


@dataclass
class SimilarityMatrix:
    """Symmetric unit-diagonal similarity with the jitter used downstream."""

    values: np.ndarray
    jitter: float

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def jittered(self) -> np.ndarray:
        """values + jitter * I, the matrix every factorization works on."""
        out = self.values.copy()
        out[np.diag_indices_from(out)] += self.jitter
        return out


def build_similarity(
    groups: Sequence[GroupId | None], spec: DiversitySpec, cfg: DppConfig
) -> SimilarityMatrix:
    """Pairwise similarity from ordinal group indices.

    Items without a group get zero similarity against everything: they never
    repel and are never repelled. The optional RBF transform post-processes
    the similarity values.
    """
    if not len(groups):
        raise EmptyInputError("no items to build a similarity matrix for")
    n = len(groups)
    g = np.fromiter(
        (-1 if x is None else x for x in groups), dtype=np.int64, count=n
    )
    grouped = g >= 0
    variant = cfg.similarity
    # pairwise similarity over ordinal distance is cheap via a (D x D) table
    num_groups = spec.num_groups
    ordinals = np.arange(num_groups, dtype=np.float64)
    dist = np.abs(ordinals[:, None] - ordinals[None, :])
    if isinstance(variant, EqualitySimilarity):
        table = np.where(dist == 0, 1.0, variant.off_diag)
    elif isinstance(variant, LinearSimilarity):
        table = 1.0 - dist / max(num_groups - 1, 1)
    elif isinstance(variant, ExponentialSimilarity):
        table = np.exp(-variant.alpha * dist)
    else:
        raise ConfigError(f"unknown similarity variant {variant!r}")
    lookup = np.zeros((num_groups + 1, num_groups + 1), dtype=np.float64)
    lookup[:num_groups, :num_groups] = table
    safe = np.where(grouped, g, num_groups)
    sim = np.ascontiguousarray(lookup[np.ix_(safe, safe)])
    np.fill_diagonal(sim, 1.0)

    if isinstance(cfg.kernel_transform, RbfTransform):
        sigma = cfg.kernel_transform.sigma
        sim = np.exp(-((1.0 - sim) ** 2) / (2.0 * sigma * sigma))
        scale = np.sqrt(np.diag(sim))
        sim = sim / np.outer(scale, scale)
        np.fill_diagonal(sim, 1.0)
    return SimilarityMatrix(values=sim, jitter=cfg.jitter)


def dpp_step_oracle(
    selected_window: Sequence[int],
    candidates: Sequence[int],
    similarity: SimilarityMatrix,
    utilities: np.ndarray,
    theta: float,
) -> int:
    """Brute-force one greedy step: dense determinant per candidate.

    Independent of the incremental path: every log-det is recomputed from
    scratch. Ties within the shared tolerance go to the lowest index.
    """
    if not len(candidates):
        raise EmptyInputError("no candidates for the greedy step")
    jittered = similarity.jittered()
    utilities = np.asarray(utilities, dtype=np.float64)
    window = list(selected_window)
    ordered = sorted(int(c) for c in candidates)
    objectives = np.empty(len(ordered), dtype=np.float64)
    for pos, cand in enumerate(ordered):
        sub = jittered[np.ix_(window + [cand], window + [cand])]
        sign, log_det = np.linalg.slogdet(sub)
        if sign <= 0 or not np.isfinite(log_det):
            objectives[pos] = -np.inf
        else:
            objectives[pos] = 2.0 * theta * utilities[cand] + log_det
    best = objectives.max()
    if not np.isfinite(best):
        raise NumericalError("windowed similarity matrix is singular")
    return ordered[int(np.flatnonzero(objectives >= best - TIE_TOLERANCE)[0])]


def _diversify_segment(
    entries: list, spec: DiversitySpec, cfg: DppConfig
) -> list:
    pool = [
        i
        for i, e in enumerate(entries)
        if cfg.score_threshold is None or e.utility >= cfg.score_threshold
    ]
    if not pool:
        return list(entries)
    similarity = build_similarity([entries[i].group for i in pool], spec, cfg)
    utilities = np.array([entries[i].utility for i in pool], dtype=np.float64)
    picks = greedy_select(
        similarity.jittered(),
        utilities,
        cfg.theta,
        cfg.window,
        min(cfg.batch_size, len(pool)),
        TIE_TOLERANCE,
    )
    chosen = [pool[j] for j in picks]
    taken = set(chosen)
    return [entries[i] for i in chosen] + [
        e for i, e in enumerate(entries) if i not in taken
    ]


def dpp_rerank(
    ranking: RankedList, spec: DiversitySpec, cfg: DppConfig
) -> RankedList:
    """Greedy windowed DPP re-rank of the leading depth of a ranking.

    Up to batch_size items are selected per depth segment; the greedy
    selection order becomes the output prefix, unselected in-depth entries
    follow in their original order, and everything beyond the covered depth
    is left untouched. Batches beyond the first cover disjoint depth segments
    and never share window state.
    """
    entries = ranking.entries
    out: list = []
    consumed = 0
    for batch in range(cfg.num_batches):
        segment = entries[batch * cfg.depth : (batch + 1) * cfg.depth]
        if not segment:
            break
        out.extend(_diversify_segment(segment, spec, cfg))
        consumed = (batch + 1) * cfg.depth
    out.extend(entries[consumed:])
    return RankedList(entries=out, query_id=ranking.query_id)
