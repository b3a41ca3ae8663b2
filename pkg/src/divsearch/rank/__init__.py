"""Diversity-aware re-rankers: round-robin cycling and windowed greedy DPP."""

from divsearch.rank.cholesky import IncrementalCholesky, log_det_incremental
from divsearch.rank.dpp import (
    DppConfig,
    EqualitySimilarity,
    ExponentialSimilarity,
    IdentityTransform,
    LinearSimilarity,
    RbfTransform,
    SimilarityMatrix,
    build_similarity,
    dpp_rerank,
    dpp_step_oracle,
)
from divsearch.rank.round_robin import ExhaustionPolicy, RoundRobinConfig, round_robin

__all__ = [
    "DppConfig",
    "EqualitySimilarity",
    "ExhaustionPolicy",
    "ExponentialSimilarity",
    "IdentityTransform",
    "IncrementalCholesky",
    "LinearSimilarity",
    "RbfTransform",
    "RoundRobinConfig",
    "SimilarityMatrix",
    "build_similarity",
    "dpp_rerank",
    "dpp_step_oracle",
    "log_det_incremental",
    "round_robin",
]
