"""Shared fixtures and builders for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from divsearch.core import Corpus, DiversitySpec, Item, RankedList, ScoredItem


@pytest.fixture
def spec4() -> DiversitySpec:
    return DiversitySpec("tone", ("d1", "d2", "d3", "d4"), ordinal=True)


# group sequence of the four-group interleaving example used across tests
FIG_SEQUENCE = [0, 0, 0, 1, 2, 0, 1, 0, 2, 3, 3, 0, 1, 1]
FIG_ROUND_ROBIN = [0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 0, 1, 0, 0]


def ranked_from_groups(
    groups,
    utilities=None,
    query_id: str = "q",
    start: float = 0.99,
    step: float = 0.01,
) -> RankedList:
    """Build a utility-sorted ranking whose entries carry the given groups.

    Groups may contain None for entries without the diversity dimension.
    """
    if utilities is None:
        utilities = [round(start - i * step, 10) for i in range(len(groups))]
    entries = [
        ScoredItem(item_id=i + 1, utility=float(u), group=g)
        for i, (g, u) in enumerate(zip(groups, utilities))
    ]
    return RankedList(entries=entries, query_id=query_id)


def unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((count, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def random_corpus(
    rng: np.random.Generator,
    n: int,
    dim: int,
    spec: DiversitySpec,
    groupless_fraction: float = 0.2,
    token_pool: int = 30,
) -> Corpus:
    """Small random corpus with uniform-ish groups, for retrieval tests."""
    emb = unit_rows(rng, n, dim)
    items = []
    for row in range(n):
        if rng.random() < groupless_fraction:
            group = None
        else:
            group = int(rng.integers(spec.num_groups))
        tokens = frozenset(
            f"t{j}" for j in rng.choice(token_pool, size=rng.integers(2, 6), replace=False)
        )
        items.append(
            Item(
                id=row + 1,
                embedding=emb[row],
                tokens=tokens,
                group=group,
                category="fashion",
            )
        )
    return Corpus(items, spec)
