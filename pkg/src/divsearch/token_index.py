"""Inverted token index with structured boolean queries.

Besides plain AND/OR, the index supports a Strong-OR operator: a disjunction
whose children may carry minimum-count (or minimum-fraction) quotas over the
returned set. When remaining capacity no longer covers the remaining quota
deficit, candidates that do not help a deficient child are passed over in
favor of ones that do.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

from divsearch.core import Corpus
from divsearch.errors import ConfigError, QueryParseError

GROUP_TOKEN_PREFIX = "__group:"


def group_token(label: str) -> str:
    """Synthetic index token for a diversity group label."""
    return GROUP_TOKEN_PREFIX + label


@dataclass(frozen=True)
class Term:
    token: str


@dataclass(frozen=True)
class And:
    children: tuple["Node", ...]

    def __post_init__(self):
        if not self.children:
            raise ConfigError("AND needs at least one child")


@dataclass(frozen=True)
class Or:
    children: tuple["Node", ...]

    def __post_init__(self):
        if not self.children:
            raise ConfigError("OR needs at least one child")


@dataclass(frozen=True)
class Quota:
    """Minimum count or minimum fraction of the returned set."""

    min_count: int | None = None
    min_fraction: float | None = None

    def __post_init__(self):
        if (self.min_count is None) == (self.min_fraction is None):
            raise ConfigError("quota needs exactly one of min_count / min_fraction")
        if self.min_count is not None and self.min_count < 1:
            raise ConfigError(f"quota min_count must be >= 1, got {self.min_count}")
        if self.min_fraction is not None and not 0.0 < self.min_fraction <= 1.0:
            raise ConfigError(
                f"quota min_fraction must be in (0, 1], got {self.min_fraction}"
            )

    def resolve(self, scan_limit: int) -> int:
        if self.min_count is not None:
            return self.min_count
        return math.ceil(self.min_fraction * scan_limit)


@dataclass(frozen=True)
class StrongOr:
    children: tuple["Node", ...]
    quotas: tuple[Quota | None, ...]
    scan_limit: int

    def __post_init__(self):
        if len(self.children) < 2:
            raise ConfigError("Strong-OR needs at least two children")
        if len(self.quotas) != len(self.children):
            raise ConfigError("one (optional) quota per Strong-OR child")
        if self.scan_limit < 1:
            raise ConfigError(f"scan_limit must be >= 1, got {self.scan_limit}")
        implied = sum(self.resolved_quotas())
        if implied > self.scan_limit:
            raise ConfigError(
                f"quotas require {implied} results but scan_limit is {self.scan_limit}"
            )

    def resolved_quotas(self) -> list[int]:
        """Per-child minimum counts; 0 for children without a quota."""
        return [
            0 if q is None else q.resolve(self.scan_limit) for q in self.quotas
        ]


Node = Union[Term, And, Or, StrongOr]


class InvertedIndex:
    """Token postings in scan order plus a static per-document rank."""

    def __init__(self, postings: dict[str, list[int]], doc_rank: dict[int, int]):
        self.doc_rank = dict(doc_rank)
        self.postings = {
            token: sorted(ids, key=self.doc_rank.__getitem__)
            for token, ids in postings.items()
        }

    def postings_for(self, token: str) -> list[int]:
        return self.postings.get(token, [])

    def rank(self, item_id: int) -> int:
        return self.doc_rank[item_id]


def build_index(corpus: Corpus) -> InvertedIndex:
    """Index every item token plus the synthetic group token.

    Scan rank is assigned by ascending item id.
    """
    doc_rank = {int(i): r for r, i in enumerate(corpus.id_array)}
    postings: dict[str, list[int]] = {}
    for item in corpus:
        tokens = set(item.tokens)
        if item.group is not None:
            tokens.add(group_token(corpus.spec.groups[item.group]))
        for token in tokens:
            postings.setdefault(token, []).append(item.id)
    return InvertedIndex(postings, doc_rank)


def matches(index: InvertedIndex, node: Node) -> list[int]:
    """All ids matching a subtree, in ascending scan order."""
    if isinstance(node, Term):
        return list(index.postings_for(node.token))
    if isinstance(node, And):
        sets = [set(matches(index, child)) for child in node.children]
        common = set.intersection(*sets)
        return sorted(common, key=index.rank)
    if isinstance(node, Or):
        union: set[int] = set()
        for child in node.children:
            union.update(matches(index, child))
        return sorted(union, key=index.rank)
    if isinstance(node, StrongOr):
        return eval_strong_or(index, node).main
    raise ConfigError(f"unknown query node {node!r}")


def eval_or(index: InvertedIndex, children: tuple[Node, ...], k: int) -> list[int]:
    """Plain disjunction: merged scan-order union, deduplicated, first k."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    return matches(index, Or(tuple(children)))[:k]


@dataclass
class TokenRetrievalResult:
    """Main scan-order results plus per-quota-child capture buckets."""

    main: list[int]
    buckets: dict[int, list[int]] = field(default_factory=dict)


def eval_strong_or(index: InvertedIndex, node: StrongOr) -> TokenRetrievalResult:
    """Disjunction with per-child quotas over the returned set.

    Acts as a plain OR when the OR top-k already satisfies every quota.
    Otherwise candidates are scanned in rank order; once the remaining
    capacity is needed to cover the remaining quota deficit, only candidates
    matching a deficient child are admitted. Candidates matching a child that
    is still deficient once main is full are captured into that child's
    bucket. If the posting lists run out before main fills, passed-over
    candidates backfill in scan order.
    """
    limit = node.scan_limit
    child_matches = [matches(index, child) for child in node.children]
    quotas = node.resolved_quotas()
    quota_children = [i for i, q in enumerate(quotas) if q > 0]

    union: set[int] = set()
    for ids in child_matches:
        union.update(ids)
    scan = sorted(union, key=index.rank)

    match_sets = [set(ids) for ids in child_matches]
    or_main = scan[:limit]
    if all(
        sum(1 for doc in or_main if doc in match_sets[i]) >= quotas[i]
        for i in quota_children
    ):
        return TokenRetrievalResult(main=or_main, buckets={i: [] for i in quota_children})

    counts = {i: 0 for i in quota_children}
    main: list[int] = []
    passed_over: list[int] = []
    buckets: dict[int, list[int]] = {i: [] for i in quota_children}

    for doc in scan:
        if len(main) < limit:
            capacity = limit - len(main)
            deficient = [i for i in quota_children if counts[i] < quotas[i]]
            deficit = sum(quotas[i] - counts[i] for i in deficient)
            if deficit >= capacity and not any(
                doc in match_sets[i] for i in deficient
            ):
                passed_over.append(doc)
                continue
            main.append(doc)
            for i in quota_children:
                if doc in match_sets[i]:
                    counts[i] += 1
        else:
            deficient = [i for i in quota_children if counts[i] < quotas[i]]
            if not deficient:
                break
            for i in deficient:
                if doc in match_sets[i] and len(buckets[i]) < quotas[i]:
                    buckets[i].append(doc)
            if all(len(buckets[i]) >= quotas[i] for i in deficient):
                break

    if len(main) < limit and passed_over:
        main.extend(passed_over[: limit - len(main)])
        main.sort(key=index.rank)
    return TokenRetrievalResult(main=main, buckets=buckets)


def evaluate(index: InvertedIndex, node: Node, k: int | None = None) -> TokenRetrievalResult:
    """Evaluate a query tree; a top-level Strong-OR uses its own scan limit."""
    if isinstance(node, StrongOr):
        return eval_strong_or(index, node)
    found = matches(index, node)
    if k is not None:
        found = found[:k]
    return TokenRetrievalResult(main=found, buckets={})


_TOKEN_RE = re.compile(r"[A-Za-z0-9_:.\-]+")
_NUMBER_RE = re.compile(r"\d+(\.\d+)?")


class _Parser:
    """Recursive-descent parser for the s-query text syntax.

    Grammar:
        node   := AND "(" node ("," node)* ")"
                | OR "(" node ("," node)* ")"
                | SOR "(" K "=" int ";" child ("," child)* ")"
                | token
        child  := node [ "{" ("min" "=" int | "frac" "=" number) "}" ]
    """

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def parse(self) -> Node:
        node = self._node()
        self._skip_ws()
        if self.pos != len(self.text):
            raise QueryParseError("trailing input after query", self.pos)
        return node

    def _skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _expect(self, literal: str) -> None:
        self._skip_ws()
        if not self.text.startswith(literal, self.pos):
            raise QueryParseError(f"expected {literal!r}", self.pos)
        self.pos += len(literal)

    def _peek(self, literal: str) -> bool:
        self._skip_ws()
        return self.text.startswith(literal, self.pos)

    def _ident(self) -> str:
        self._skip_ws()
        match = _TOKEN_RE.match(self.text, self.pos)
        if not match:
            raise QueryParseError("expected a token", self.pos)
        self.pos = match.end()
        return match.group()

    def _number(self) -> float:
        self._skip_ws()
        match = _NUMBER_RE.match(self.text, self.pos)
        if not match:
            raise QueryParseError("expected a number", self.pos)
        self.pos = match.end()
        return float(match.group())

    def _int(self) -> int:
        self._skip_ws()
        start = self.pos
        value = self._number()
        if value != int(value):
            raise QueryParseError("expected an integer", start)
        return int(value)

    def _node(self) -> Node:
        self._skip_ws()
        start = self.pos
        for keyword in ("AND", "OR", "SOR"):
            if self.text.startswith(keyword + "(", self.pos) or (
                self.text.startswith(keyword, self.pos)
                and self.text[self.pos + len(keyword) :].lstrip().startswith("(")
            ):
                self.pos += len(keyword)
                return self._operator(keyword, start)
        return Term(self._ident())

    def _operator(self, keyword: str, start: int) -> Node:
        self._expect("(")
        if keyword == "SOR":
            return self._strong_or(start)
        children = [self._node()]
        while self._peek(","):
            self._expect(",")
            children.append(self._node())
        self._expect(")")
        try:
            return And(tuple(children)) if keyword == "AND" else Or(tuple(children))
        except ConfigError as exc:
            raise QueryParseError(str(exc), start) from None

    def _strong_or(self, start: int) -> StrongOr:
        key = self._ident()
        if key != "K":
            raise QueryParseError("Strong-OR must start with K=<scan limit>", start)
        self._expect("=")
        scan_limit = self._int()
        self._expect(";")
        children: list[Node] = []
        quotas: list[Quota | None] = []
        while True:
            children.append(self._node())
            quotas.append(self._quota())
            if not self._peek(","):
                break
            self._expect(",")
        self._expect(")")
        try:
            return StrongOr(tuple(children), tuple(quotas), scan_limit)
        except ConfigError as exc:
            raise QueryParseError(str(exc), start) from None

    def _quota(self) -> Quota | None:
        if not self._peek("{"):
            return None
        self._expect("{")
        start = self.pos
        key = self._ident()
        self._expect("=")
        if key == "min":
            quota = Quota(min_count=self._int())
        elif key == "frac":
            quota = Quota(min_fraction=self._number())
        else:
            raise QueryParseError(f"unknown quota key {key!r}", start)
        self._expect("}")
        return quota


def parse_squery(text: str) -> Node:
    """Parse the s-query text syntax, e.g. SOR(K=10; a, b{min=3})."""
    return _Parser(text).parse()
