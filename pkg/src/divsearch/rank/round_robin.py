"""Round-robin re-ranker: cycle through per-group sub-lists of a ranking.

Entries that carry no group or score below the threshold keep their original
positions; everything else is re-slotted by cycling through the groups in
first-encountered order, so the top item never moves.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from divsearch.core import DiversitySpec, RankedList, ScoredItem
from divsearch.errors import ConfigError


class ExhaustionPolicy(Enum):
    """What to do when a sub-list runs out mid-cycle."""

    SKIP = "Skip"
    MERGE_ADJACENT = "MergeAdjacent"


@dataclass(frozen=True)
class RoundRobinConfig:
    score_threshold: float = 0.0
    randomize_window: bool = False
    exhaustion_policy: ExhaustionPolicy = ExhaustionPolicy.SKIP
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ConfigError(
                f"score_threshold must be in [0, 1], got {self.score_threshold}"
            )


def _merge_adjacent(
    sublists: dict[int, deque], num_groups: int
) -> list[tuple[int, deque]]:
    """Merge sub-lists of ordinally adjacent groups: (0,1), (2,3), ...

    Items inside a merged list keep their original relative order; an odd
    trailing group stands alone. Empty pairs are dropped.
    """
    merged = []
    for lo in range(0, num_groups, 2):
        pair = list(sublists.get(lo, ())) + list(sublists.get(lo + 1, ()))
        if pair:
            pair.sort(key=lambda tagged: tagged[0])
            merged.append((lo // 2, deque(pair)))
    return merged


def _cycle_select(
    sublists: dict[int, deque],
    cycle: list[int],
    total: int,
    policy: ExhaustionPolicy,
    num_groups: int,
) -> list[ScoredItem]:
    out: list[ScoredItem] = []
    idx = 0
    while len(out) < total and cycle:
        idx %= len(cycle)
        group = cycle[idx]
        if sublists[group]:
            out.append(sublists[group].popleft()[1])
            idx += 1
        elif policy is ExhaustionPolicy.SKIP:
            cycle.pop(idx)
        else:
            merged = _merge_adjacent(sublists, num_groups)
            start = next(
                (i for i, (pair, _) in enumerate(merged) if pair >= group // 2), 0
            )
            queues = deque(q for _, q in merged)
            queues.rotate(-start)
            while len(out) < total and queues:
                queue = queues.popleft()
                if queue:
                    out.append(queue.popleft()[1])
                    queues.append(queue)
            break
    return out


def round_robin(
    ranking: RankedList, spec: DiversitySpec, cfg: RoundRobinConfig
) -> RankedList:
    """Re-rank by cycling through group sub-lists, taking each head in turn."""
    entries = ranking.entries
    eligible = [
        e.group is not None and e.utility >= cfg.score_threshold for e in entries
    ]

    sublists: dict[int, deque] = {}
    cycle: list[int] = []
    fill_positions: list[int] = []
    for pos, entry in enumerate(entries):
        if not eligible[pos]:
            continue
        fill_positions.append(pos)
        if entry.group not in sublists:
            sublists[entry.group] = deque()
            cycle.append(entry.group)
        sublists[entry.group].append((pos, entry))

    diversified = _cycle_select(
        sublists, cycle, len(fill_positions), cfg.exhaustion_policy, spec.num_groups
    )

    if cfg.randomize_window and diversified:
        rng = np.random.default_rng(cfg.rng_seed)
        window = spec.num_groups
        for start in range(0, len(diversified), window):
            block = diversified[start : start + window]
            order = rng.permutation(len(block))
            diversified[start : start + window] = [block[i] for i in order]

    output = list(entries)
    for pos, entry in zip(fill_positions, diversified):
        output[pos] = entry
    return RankedList(entries=output, query_id=ranking.query_id)
