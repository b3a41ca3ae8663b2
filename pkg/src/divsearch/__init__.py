"""Multi-stage search diversification engine.

Retrieval operators (Strong-OR over token indices, bucketized scatter-gather
ANN, overfetch-and-rerank) feed diversity-aware re-rankers (round-robin,
windowed greedy DPP), with metrics quantifying the diversity-utility
trade-off.
"""

from divsearch.core import (
    Corpus,
    DiversitySpec,
    Item,
    RankedList,
    ScoredItem,
    load_corpus,
    load_spec,
    save_corpus,
    save_spec,
    score_by_query,
)
from divsearch.metrics import (
    MetricReport,
    div_at_k,
    evaluate_rankings,
    mean_utility_at_k,
    shannon_equitability,
)

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "DiversitySpec",
    "Item",
    "MetricReport",
    "RankedList",
    "ScoredItem",
    "div_at_k",
    "evaluate_rankings",
    "load_corpus",
    "load_spec",
    "mean_utility_at_k",
    "save_corpus",
    "save_spec",
    "score_by_query",
    "shannon_equitability",
]
