"""Syntactically relevant candidate indexes."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Iterable, Sequence

from .ir import ColumnRef, IndexDef, LogicalQuery, Role
from .sql import extract_indexable_columns

SINGLE_COLUMN = "single_column"
MULTI_COLUMN_PREFIX = "multi_column_prefix"
COVERING = "covering"
MERGED = "merged"

# group-by and order-by share a rank and keep clause order among themselves
_KEY_RANK = {Role.FILTER_EQ: 0, Role.JOIN: 1, Role.FILTER_RANGE: 2,
             Role.GROUP_BY: 3, Role.ORDER_BY: 3}


@dataclass(frozen=True)
class CandidatePair:
    query_id: str
    index: IndexDef
    origin: str


def _ordered_columns(cols: Sequence[ColumnRef]) -> list[ColumnRef]:
    return sorted(cols, key=lambda c: _KEY_RANK[c.role])  # stable


def _range_before_eq(perm: Sequence[ColumnRef]) -> bool:
    seen_range = False
    for c in perm:
        if c.role is Role.FILTER_RANGE:
            seen_range = True
        elif c.role is Role.FILTER_EQ and seen_range:
            return True
    return False


def generate_syntactic_indexes(q: LogicalQuery, max_key_width: int = 3) -> list[CandidatePair]:
    """Per-table single-column, multi-column and covering candidates for ``q``.

    Multi-column keys are the ordered permutations (width 2..max_key_width) of
    the table's indexable columns, skipping any that put a range column ahead
    of an equality column. Covering variants add the query's projected columns
    on that table as INCLUDE columns.
    """
    out: dict[str, CandidatePair] = {}
    indexable = extract_indexable_columns(q)
    for table in q.tables:
        cols = _ordered_columns([c for c in indexable if c.table == table])
        if not cols:
            continue
        projected = [c.column for c in q.projected if c.table == table]
        keys: list[tuple[tuple[str, ...], str]] = [((c.column,), SINGLE_COLUMN) for c in cols]
        for width in range(2, min(max_key_width, len(cols)) + 1):
            for perm in permutations(cols, width):
                if not _range_before_eq(perm):
                    keys.append((tuple(c.column for c in perm), MULTI_COLUMN_PREFIX))
        for key, origin in keys:
            base = IndexDef(table, key)
            out.setdefault(base.id, CandidatePair(q.id, base, origin))
        for key, _ in keys:
            incl = tuple(c for c in projected if c not in key)
            if incl:
                cov = IndexDef(table, key, incl)
                out.setdefault(cov.id, CandidatePair(q.id, cov, COVERING))
    return list(out.values())


class CandidateSet:
    """Workload-level candidate indexes keyed by canonical id, with interested queries."""

    def __init__(self, entries: dict[str, tuple[IndexDef, tuple[str, ...]]] | None = None):
        self._entries = dict(sorted((entries or {}).items()))

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return (ix for ix, _ in self._entries.values())

    def __contains__(self, index_id: str) -> bool:
        return index_id in self._entries

    @property
    def indexes(self) -> list[IndexDef]:
        return list(self)

    @property
    def ids(self) -> list[str]:
        return list(self._entries)

    def get(self, index_id: str) -> IndexDef:
        return self._entries[index_id][0]

    def interested(self, index_id: str) -> tuple[str, ...]:
        return self._entries[index_id][1]

    def for_query(self, qid: str) -> list[IndexDef]:
        return [ix for ix, qs in self._entries.values() if qid in qs]

    def subset(self, ids: Iterable[str]) -> "CandidateSet":
        keep = set(ids)
        return CandidateSet({k: v for k, v in self._entries.items() if k in keep})

    def to_pairs(self) -> list[CandidatePair]:
        return [CandidatePair(qid, ix, MERGED) for ix, qs in self._entries.values() for qid in qs]


def union_candidates(pairs: Iterable[CandidatePair]) -> CandidateSet:
    merged: dict[str, tuple[IndexDef, list[str]]] = {}
    for p in pairs:
        ix, qids = merged.setdefault(p.index.id, (p.index, []))
        if p.query_id not in qids:
            qids.append(p.query_id)
    return CandidateSet({k: (ix, tuple(sorted(qs))) for k, (ix, qs) in merged.items()})


def generate_candidates(queries: Iterable[LogicalQuery], max_key_width: int = 3) -> CandidateSet:
    pairs = []
    for q in queries:
        pairs.extend(generate_syntactic_indexes(q, max_key_width))
    return union_candidates(pairs)
