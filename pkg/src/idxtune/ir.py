"""Common data representation shared by the tuner and every engine adapter.

Everything here is immutable after construction. Index identity is the
canonical id string; every tie in the package is broken on it (then on query
id), which is what makes randomized and multi-threaded runs reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Iterator, Mapping

from .errors import SchemaError

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

#: per-row bookkeeping bytes added to every index entry
INDEX_ROW_OVERHEAD = 16


def _check_ident(name: str, what: str) -> None:
    if not isinstance(name, str) or not _IDENT.match(name):
        raise SchemaError(f"invalid {what} identifier: {name!r}")


class Role(str, Enum):
    FILTER_EQ = "filter_eq"
    FILTER_RANGE = "filter_range"
    JOIN = "join"
    GROUP_BY = "group_by"
    ORDER_BY = "order_by"
    PROJECTED = "projected"

    @property
    def priority(self) -> int:
        """Lower is stronger: filter_eq > join > filter_range > group_by > order_by."""
        return _ROLE_PRIORITY[self]

    @property
    def indexable(self) -> bool:
        return self is not Role.PROJECTED


_ROLE_PRIORITY = {
    Role.FILTER_EQ: 0,
    Role.JOIN: 1,
    Role.FILTER_RANGE: 2,
    Role.GROUP_BY: 3,
    Role.ORDER_BY: 4,
    Role.PROJECTED: 5,
}


class Op(str, Enum):
    EQ = "eq"
    RANGE = "range"


@dataclass(frozen=True, order=True)
class ColumnRef:
    table: str
    column: str
    role: Role

    def __post_init__(self):
        _check_ident(self.table, "table")
        _check_ident(self.column, "column")
        if not isinstance(self.role, Role):
            object.__setattr__(self, "role", Role(self.role))

    @property
    def qualified(self) -> str:
        return f"{self.table}.{self.column}"

    def with_role(self, role: Role) -> "ColumnRef":
        return ColumnRef(self.table, self.column, role)


@dataclass(frozen=True)
class Predicate:
    """``column op literal`` with the selectivity the optimizer should assume.

    ``values`` keeps the literal tokens so a query can be printed back; it
    never influences costing.
    """

    column: ColumnRef
    op: Op
    selectivity: float
    values: tuple[str, ...] = ()
    comparator: str = ""

    def __post_init__(self):
        if not self.comparator:
            object.__setattr__(self, "comparator", "=" if Op(self.op) is Op.EQ else "between")
        if not isinstance(self.op, Op):
            object.__setattr__(self, "op", Op(self.op))
        sel = float(self.selectivity)
        if not (0.0 < sel <= 1.0):
            raise ValueError(f"selectivity must be in (0, 1], got {sel}")
        object.__setattr__(self, "selectivity", sel)


@dataclass(frozen=True)
class LogicalQuery:
    """A single-block query over one table or a two-table equi-join."""

    id: str
    tables: tuple[str, ...]
    predicates: tuple[Predicate, ...] = ()
    join_pred: tuple[ColumnRef, ColumnRef] | None = None
    group_by: tuple[ColumnRef, ...] = ()
    order_by: tuple[ColumnRef, ...] = ()
    projected: tuple[ColumnRef, ...] = ()
    weight: float = 1.0

    def __post_init__(self):
        tables = tuple(self.tables)
        object.__setattr__(self, "tables", tables)
        if not 1 <= len(tables) <= 2 or len(set(tables)) != len(tables):
            raise ValueError(f"query {self.id}: expected 1 or 2 distinct tables, got {tables}")
        if not self.weight > 0:
            raise ValueError(f"query {self.id}: weight must be > 0")
        if self.join_pred is not None and len(tables) != 2:
            raise ValueError(f"query {self.id}: join predicate needs two tables")
        if len(tables) == 2 and self.join_pred is None:
            raise ValueError(f"query {self.id}: two tables without a join predicate")
        for ref in self.column_refs():
            if ref.table not in tables:
                raise ValueError(f"query {self.id}: {ref.qualified} references undeclared table")

    def column_refs(self) -> Iterator[ColumnRef]:
        for p in self.predicates:
            yield p.column
        if self.join_pred:
            yield from self.join_pred
        yield from self.group_by
        yield from self.order_by
        yield from self.projected

    def referenced_columns(self, table: str) -> frozenset[str]:
        """Every column of ``table`` the query touches, in any clause."""
        return self._referenced.get(table, frozenset())

    @cached_property
    def _referenced(self) -> dict[str, frozenset[str]]:
        out: dict[str, set[str]] = {t: set() for t in self.tables}
        for ref in self.column_refs():
            out[ref.table].add(ref.column)
        return {t: frozenset(cols) for t, cols in out.items()}

    @cached_property
    def template_id(self) -> str:
        from .sql import templatize

        return templatize(self).template_id

    def with_weight(self, weight: float) -> "LogicalQuery":
        return LogicalQuery(self.id, self.tables, self.predicates, self.join_pred,
                            self.group_by, self.order_by, self.projected, weight)


@dataclass(frozen=True)
class Workload:
    queries: tuple[LogicalQuery, ...]
    baseline_cost: Mapping[str, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        ids = [q.id for q in self.queries]
        if len(set(ids)) != len(ids):
            raise ValueError("query ids must be unique")

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self) -> Iterator[LogicalQuery]:
        return iter(self.queries)

    def by_id(self, qid: str) -> LogicalQuery:
        for q in self.queries:
            if q.id == qid:
                return q
        raise KeyError(qid)

    @property
    def total_weight(self) -> float:
        return sum(q.weight for q in self.queries)


@dataclass(frozen=True)
class IndexDef:
    """A B-tree style index: ordered key columns plus an unordered INCLUDE set."""

    table: str
    key_columns: tuple[str, ...]
    included_columns: tuple[str, ...] = ()

    def __post_init__(self):
        _check_ident(self.table, "table")
        keys = tuple(self.key_columns)
        if not keys:
            raise SchemaError("index needs at least one key column")
        if len(set(keys)) != len(keys):
            raise SchemaError(f"duplicate key column in {keys}")
        incl = tuple(sorted(set(self.included_columns)))
        for c in keys + incl:
            _check_ident(c, "column")
        if set(keys) & set(incl):
            raise SchemaError("key and included columns must be disjoint")
        object.__setattr__(self, "key_columns", keys)
        object.__setattr__(self, "included_columns", incl)

    @cached_property
    def id(self) -> str:
        return canonical_index_id(self)

    @property
    def columns(self) -> frozenset[str]:
        return frozenset(self.key_columns) | frozenset(self.included_columns)

    def ddl(self) -> str:
        name = "ix_" + self.table + "_" + "_".join(self.key_columns)
        if self.included_columns:
            name += "_inc_" + "_".join(self.included_columns)
        sql = f"CREATE INDEX {name} ON {self.table} ({', '.join(self.key_columns)})"
        if self.included_columns:
            sql += f" INCLUDE ({', '.join(self.included_columns)})"
        return sql

    def to_dict(self) -> dict:
        return {"table": self.table, "key": list(self.key_columns),
                "include": list(self.included_columns)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "IndexDef":
        return cls(d["table"], tuple(d["key"]), tuple(d.get("include", ())))

    def __lt__(self, other: "IndexDef") -> bool:
        return self.id < other.id


def canonical_index_id(index: IndexDef) -> str:
    """``table(k1,k2)`` or ``table(k1,k2)+(i1,i2)``; included columns sorted.

    Identifiers cannot contain the delimiters, so the mapping is injective.
    """
    out = f"{index.table}({','.join(index.key_columns)})"
    if index.included_columns:
        out += f"+({','.join(sorted(index.included_columns))})"
    return out


class Configuration:
    """An immutable set of indexes, iterated in canonical-id order."""

    __slots__ = ("_by_id", "_signature", "_hash")

    def __init__(self, indexes: Iterable[IndexDef] = ()):
        by_id: dict[str, IndexDef] = {}
        for ix in indexes:
            by_id.setdefault(ix.id, ix)
        self._by_id = dict(sorted(by_id.items()))
        self._signature = ";".join(self._by_id)
        self._hash = hash(self._signature)

    @property
    def signature(self) -> str:
        return self._signature

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._by_id)

    def __iter__(self) -> Iterator[IndexDef]:
        return iter(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, ix: object) -> bool:
        key = ix.id if isinstance(ix, IndexDef) else ix
        return key in self._by_id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Configuration) and other._signature == self._signature

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"Configuration([{self._signature}])"

    def get(self, index_id: str) -> IndexDef:
        return self._by_id[index_id]

    def add(self, ix: IndexDef) -> "Configuration":
        return Configuration([*self, ix])

    def remove(self, index_id: str) -> "Configuration":
        return Configuration(ix for ix in self if ix.id != index_id)

    def union(self, other: Iterable[IndexDef]) -> "Configuration":
        return Configuration([*self, *other])

    def restrict(self, tables: Iterable[str]) -> "Configuration":
        tables = set(tables)
        return Configuration(ix for ix in self if ix.table in tables)

    def on_table(self, table: str) -> list[IndexDef]:
        return [ix for ix in self if ix.table == table]

    def issubset(self, other: "Configuration") -> bool:
        return all(i in other._by_id for i in self._by_id)


EMPTY = Configuration()


@dataclass(frozen=True)
class TuningConstraints:
    max_indexes: int = 20
    storage_budget_bytes: int | None = None
    whatif_budget: int | None = None
    min_improvement_epsilon: float = 0.001

    def __post_init__(self):
        if self.max_indexes < 0:
            raise ValueError("max_indexes must be >= 0")
        if self.storage_budget_bytes is not None and self.storage_budget_bytes < 0:
            raise ValueError("storage budget must be nonnegative")
        if self.whatif_budget is not None and self.whatif_budget <= 0:
            raise ValueError("what-if budget must be positive")


@dataclass(frozen=True)
class ColumnStats:
    name: str
    width_bytes: int
    distinct_count: int


@dataclass(frozen=True)
class TableStats:
    table: str
    rows: int
    columns: Mapping[str, ColumnStats] = field(default_factory=dict)

    def __post_init__(self):
        _check_ident(self.table, "table")
        if self.rows < 1:
            raise SchemaError(f"{self.table}: rows must be positive")
        for name, c in self.columns.items():
            _check_ident(name, "column")
            if c.width_bytes < 1:
                raise SchemaError(f"{self.table}.{name}: width must be >= 1")
            if not 1 <= c.distinct_count <= self.rows:
                raise SchemaError(f"{self.table}.{name}: distinct count must be in [1, rows]")

    def column(self, name: str) -> ColumnStats:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"unknown column {self.table}.{name}") from None


class Schema(Mapping[str, TableStats]):
    """Read-only table catalog; lookups of unknown names raise SchemaError."""

    def __init__(self, tables: Iterable[TableStats]):
        self._tables = {t.table: t for t in tables}

    def __getitem__(self, name: str) -> TableStats:
        try:
            return self._tables[name]
        except KeyError:
            raise SchemaError(f"unknown table {name!r}") from None

    def __iter__(self):
        return iter(self._tables)

    def __len__(self) -> int:
        return len(self._tables)

    def validate_index(self, ix: IndexDef) -> None:
        stats = self[ix.table]
        for c in ix.key_columns + ix.included_columns:
            stats.column(c)

    def to_dict(self) -> dict:
        return {"tables": [
            {"name": t.table, "rows": t.rows,
             "columns": [{"name": c.name, "width": c.width_bytes, "distinct": c.distinct_count}
                         for c in t.columns.values()]}
            for t in self._tables.values()]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        tables = []
        for t in d["tables"]:
            cols = {c["name"]: ColumnStats(c["name"], int(c["width"]), int(c["distinct"]))
                    for c in t["columns"]}
            tables.append(TableStats(t["name"], int(t["rows"]), cols))
        return cls(tables)


def estimate_index_size(index: IndexDef, stats: TableStats) -> int:
    """rows x (sum of key and included column widths + per-row overhead)."""
    if stats.table != index.table:
        raise SchemaError(f"stats for {stats.table} do not cover index on {index.table}")
    width = sum(stats.column(c).width_bytes for c in index.key_columns + index.included_columns)
    return stats.rows * (width + INDEX_ROW_OVERHEAD)


def configuration_size(config: Iterable[IndexDef], schema: Schema) -> int:
    return sum(estimate_index_size(ix, schema[ix.table]) for ix in config)


@dataclass(frozen=True)
class TableAccess:
    table: str
    kind: str  # "full_scan" | "index_seek"
    index_id: str | None = None
    matched_prefix_len: int = 0
    covering: bool = False

    def describe(self) -> str:
        if self.kind == "full_scan":
            return f"{self.table}:scan"
        cov = "c" if self.covering else "l"
        return f"{self.table}:seek[{self.index_id}/{self.matched_prefix_len}/{cov}]"


@dataclass(frozen=True)
class PlanDescriptor:
    accesses: tuple[TableAccess, ...]
    sort_eliminated: bool = False
    join_method: str | None = None  # "index_nested_loop" | "hash"

    @cached_property
    def signature(self) -> str:
        parts = [a.describe() for a in sorted(self.accesses, key=lambda a: a.table)]
        parts.append("join=" + (self.join_method or "none"))
        parts.append("sort=" + ("elim" if self.sort_eliminated else "keep"))
        return "|".join(parts)

    def access(self, table: str) -> TableAccess | None:
        for a in self.accesses:
            if a.table == table:
                return a
        return None

    def index_ids(self) -> tuple[str, ...]:
        return tuple(sorted({a.index_id for a in self.accesses if a.index_id}))

    def to_dict(self) -> dict:
        return {"accesses": [{"table": a.table, "kind": a.kind, "index": a.index_id,
                              "matched_prefix_len": a.matched_prefix_len, "covering": a.covering}
                             for a in self.accesses],
                "sort_eliminated": self.sort_eliminated, "join_method": self.join_method,
                "signature": self.signature}
