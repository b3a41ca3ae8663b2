"""Domain types shared by all stages: diversity groups, items, corpus, rankings.

The corpus is immutable after construction and keeps items in ascending-id
order so that every downstream operation is deterministic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from divsearch.errors import ConfigError, DimensionError, EmptyInputError, NotFoundError

# 0-based index into DiversitySpec.groups
GroupId = int

NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class DiversitySpec:
    """A diversity dimension: an ordered list of group labels."""

    dimension_name: str
    groups: tuple[str, ...]
    ordinal: bool = True

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if not self.groups:
            raise ConfigError("diversity spec needs at least one group")
        if len(set(self.groups)) != len(self.groups):
            raise ConfigError("group labels must be unique")

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def group_index(self, label: str) -> GroupId:
        try:
            return self.groups.index(label)
        except ValueError:
            raise ConfigError(f"unknown group label {label!r}") from None

    def to_dict(self) -> dict:
        return {
            "dimension_name": self.dimension_name,
            "groups": list(self.groups),
            "ordinal": self.ordinal,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DiversitySpec":
        try:
            return cls(
                dimension_name=data["dimension_name"],
                groups=tuple(data["groups"]),
                ordinal=bool(data.get("ordinal", True)),
            )
        except KeyError as exc:
            raise ConfigError(f"spec file missing field {exc}") from None


@dataclass(frozen=True, eq=False)
class Item:
    """A corpus element: id, unit embedding, token set, optional group, category."""

    id: int
    embedding: np.ndarray
    tokens: frozenset[str]
    group: GroupId | None
    category: str


@dataclass(frozen=True)
class ScoredItem:
    item_id: int
    utility: float
    group: GroupId | None = None


@dataclass
class RankedList:
    """Utility-scored items in rank order."""

    entries: list[ScoredItem]
    query_id: str = ""

    def __post_init__(self):
        ids = [e.item_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate item ids in ranking {self.query_id!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def utilities(self) -> np.ndarray:
        return np.array([e.utility for e in self.entries], dtype=np.float64)

    def item_ids(self) -> list[int]:
        return [e.item_id for e in self.entries]

    def groups(self) -> list[GroupId | None]:
        return [e.group for e in self.entries]


class Corpus:
    """Immutable, id-ordered item store with a dense embedding matrix."""

    def __init__(self, items: Iterable[Item], spec: DiversitySpec):
        items = sorted(items, key=lambda it: it.id)
        if not items:
            raise EmptyInputError("corpus needs at least one item")
        ids = np.array([it.id for it in items], dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise ConfigError("duplicate item ids in corpus")
        dim = len(items[0].embedding)
        emb = np.empty((len(items), dim), dtype=np.float64)
        groups = np.full(len(items), -1, dtype=np.int32)
        for row, it in enumerate(items):
            vec = np.asarray(it.embedding, dtype=np.float64)
            if vec.shape != (dim,):
                raise DimensionError(
                    f"item {it.id}: embedding dim {vec.shape} != ({dim},)"
                )
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > NORM_TOLERANCE:
                raise ConfigError(f"item {it.id}: embedding norm {norm} is not 1")
            emb[row] = vec
            if it.group is not None:
                if not 0 <= it.group < spec.num_groups:
                    raise ConfigError(f"item {it.id}: group index {it.group} out of range")
                groups[row] = it.group
        self._spec = spec
        self._ids = ids
        self._emb = emb
        self._groups = groups
        self._tokens = [frozenset(it.tokens) for it in items]
        self._categories = [it.category for it in items]
        self._row_of = {int(i): r for r, i in enumerate(ids)}
        self._emb.setflags(write=False)
        self._ids.setflags(write=False)
        self._groups.setflags(write=False)

    @property
    def spec(self) -> DiversitySpec:
        return self._spec

    @property
    def embedding_dim(self) -> int:
        return self._emb.shape[1]

    @property
    def id_array(self) -> np.ndarray:
        return self._ids

    @property
    def embedding_matrix(self) -> np.ndarray:
        return self._emb

    @property
    def group_array(self) -> np.ndarray:
        """Group index per row, -1 where the dimension is undefined."""
        return self._groups

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._row_of

    def row_of(self, item_id: int) -> int:
        try:
            return self._row_of[item_id]
        except KeyError:
            raise NotFoundError(f"unknown item id {item_id}") from None

    def rows_for(self, item_ids: Sequence[int]) -> np.ndarray:
        return np.array([self.row_of(i) for i in item_ids], dtype=np.intp)

    def group_of(self, item_id: int) -> GroupId | None:
        g = int(self._groups[self.row_of(item_id)])
        return None if g < 0 else g

    def item(self, item_id: int) -> Item:
        row = self.row_of(item_id)
        g = int(self._groups[row])
        return Item(
            id=int(self._ids[row]),
            embedding=self._emb[row],
            tokens=self._tokens[row],
            group=None if g < 0 else g,
            category=self._categories[row],
        )

    def __iter__(self) -> Iterator[Item]:
        for item_id in self._ids:
            yield self.item(int(item_id))


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ConfigError("query embedding has zero norm")
    return vec / norm


def score_by_query(
    corpus: Corpus,
    query_embedding: np.ndarray,
    candidate_ids: Sequence[int],
    query_id: str = "",
) -> RankedList:
    """Score candidates by cosine similarity to the query, mapped to [0, 1].

    Utility is (1 + cos) / 2; entries come back sorted non-increasing by
    utility with ties broken by ascending item id.
    """
    query = np.asarray(query_embedding, dtype=np.float64)
    if query.shape != (corpus.embedding_dim,):
        raise DimensionError(
            f"query dim {query.shape} != ({corpus.embedding_dim},)"
        )
    rows = corpus.rows_for(candidate_ids)
    cos = corpus.embedding_matrix[rows] @ _unit(query)
    utilities = np.clip((1.0 + cos) / 2.0, 0.0, 1.0)
    ids = corpus.id_array[rows]
    order = np.lexsort((ids, -utilities))
    groups = corpus.group_array[rows]
    entries = [
        ScoredItem(
            item_id=int(ids[i]),
            utility=float(utilities[i]),
            group=None if groups[i] < 0 else int(groups[i]),
        )
        for i in order
    ]
    return RankedList(entries=entries, query_id=query_id)


def save_spec(spec: DiversitySpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def load_spec(path: str | Path) -> DiversitySpec:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid spec file {path}: {exc}") from None
    return DiversitySpec.from_dict(data)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the corpus as JSON Lines, one item per line."""
    spec = corpus.spec
    with open(path, "w") as fh:
        for item in corpus:
            record = {
                "id": item.id,
                "embedding": [float(x) for x in item.embedding],
                "tokens": sorted(item.tokens),
                "group": None if item.group is None else spec.groups[item.group],
                "category": item.category,
            }
            fh.write(json.dumps(record) + "\n")


def load_corpus(path: str | Path, spec: DiversitySpec) -> Corpus:
    items = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            try:
                label = record["group"]
                items.append(
                    Item(
                        id=int(record["id"]),
                        embedding=np.asarray(record["embedding"], dtype=np.float64),
                        tokens=frozenset(record["tokens"]),
                        group=None if label is None else spec.group_index(label),
                        category=record["category"],
                    )
                )
            except KeyError as exc:
                raise ConfigError(f"{path}:{lineno}: missing field {exc}") from None
    return Corpus(items, spec)
