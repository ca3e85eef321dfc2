"""Parser for the single-block SQL subset the tuner understands.

Supported::

    SELECT cols FROM t1 [JOIN t2 ON t1.k = t2.k]
        [WHERE c = lit AND c BETWEEN lo AND hi AND c < lit ...]
        [GROUP BY cols] [ORDER BY cols [ASC|DESC]]

Columns may be qualified (``t.c``) or bare when unambiguous. Everything else
(OR, IN, LIKE, subqueries, aliases, three-way joins) raises
:class:`UnsupportedConstruct` naming the construct.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ParseError, SchemaError, UnsupportedConstruct
from .ir import ColumnRef, LogicalQuery, Op, Predicate, Role, Schema

DEFAULT_RANGE_SELECTIVITY = 0.1

_TOKEN = re.compile(
    r"""\s*(?:
        (?P<num>-?\d+(?:\.\d+)?)
      | (?P<str>'(?:[^']|'')*')
      | (?P<op><=|>=|<>|!=|=|<|>)
      | (?P<punct>[(),.;*])
      | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
    )""",
    re.VERBOSE,
)

_KEYWORDS = {
    "SELECT", "FROM", "JOIN", "INNER", "ON", "WHERE", "AND", "BETWEEN", "GROUP", "ORDER",
    "BY", "ASC", "DESC", "OR", "IN", "LIKE", "NOT", "AS", "LEFT", "RIGHT", "OUTER", "UNION",
    "HAVING", "LIMIT", "DISTINCT", "IS", "NULL", "EXISTS", "FULL", "CROSS",
}

_UNSUPPORTED_WORDS = {
    "OR": "disjunction (OR)", "IN": "IN list", "LIKE": "LIKE pattern", "NOT": "negation (NOT)",
    "UNION": "UNION", "HAVING": "HAVING clause", "LIMIT": "LIMIT clause",
    "DISTINCT": "SELECT DISTINCT", "IS": "IS [NOT] NULL", "EXISTS": "EXISTS subquery",
    "LEFT": "outer join", "RIGHT": "outer join", "FULL": "outer join", "OUTER": "outer join",
    "CROSS": "cross join", "AS": "alias",
}


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        value = m.group(kind)
        start = m.start(kind)
        if kind == "word" and value.upper() in _KEYWORDS:
            tokens.append(Token("kw", value.upper(), start))
        else:
            tokens.append(Token(kind, value, start))
        pos = m.end()
    tokens.append(Token("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, schema: Schema):
        self.text = text
        self.schema = schema
        self.toks = tokenize(text)
        self.i = 0

    # -- token helpers --------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(msg, tok.pos, self.text)

    def unsupported(self, what: str, tok: Token | None = None) -> UnsupportedConstruct:
        tok = tok or self.tok
        return UnsupportedConstruct(f"unsupported construct: {what}", tok.pos, self.text)

    def at_kw(self, *words: str) -> bool:
        return self.tok.kind == "kw" and self.tok.value in words

    def expect_kw(self, word: str) -> Token:
        if not self.at_kw(word):
            self._maybe_unsupported()
            raise self.error(f"expected {word}, found {self.tok.value or 'end of input'!r}")
        return self.advance()

    def expect(self, kind: str, value: str | None = None) -> Token:
        t = self.tok
        if t.kind != kind or (value is not None and t.value != value):
            self._maybe_unsupported()
            want = value or kind
            raise self.error(f"expected {want!r}, found {t.value or 'end of input'!r}")
        return self.advance()

    def advance(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def _maybe_unsupported(self) -> None:
        t = self.tok
        if t.kind == "kw" and t.value in _UNSUPPORTED_WORDS:
            raise self.unsupported(_UNSUPPORTED_WORDS[t.value], t)
        if t.kind == "punct" and t.value == "(":
            raise self.unsupported("parenthesized expression or subquery", t)

    # -- grammar ----------------------------------------------------------
    def parse(self):
        self.expect_kw("SELECT")
        if self.at_kw("DISTINCT"):
            raise self.unsupported("SELECT DISTINCT")
        select_items = self.select_list()
        self.expect_kw("FROM")
        tables = [self.table_name()]
        join_raw = None
        if self.at_kw("INNER"):
            self.advance()
        if self.at_kw("JOIN"):
            self.advance()
            tables.append(self.table_name())
            if tables[0] == tables[1]:
                raise self.unsupported("self-join")
            self.expect_kw("ON")
            left, op_tok = self.column_name(), self.tok
            if self.tok.kind != "op" or self.tok.value != "=":
                raise self.unsupported("non-equi join", op_tok)
            self.advance()
            right = self.column_name()
            join_raw = (left, right, op_tok)
        if self.at_kw("JOIN", "INNER"):
            raise self.unsupported("join of more than two tables")
        if self.tok.kind == "punct" and self.tok.value == ",":
            raise self.unsupported("comma join")
        conjuncts = []
        if self.at_kw("WHERE"):
            self.advance()
            conjuncts.append(self.conjunct())
            while self.at_kw("AND"):
                self.advance()
                conjuncts.append(self.conjunct())
        group_by = []
        if self.at_kw("GROUP"):
            self.advance()
            self.expect_kw("BY")
            group_by = self.column_list()
        order_by = []
        if self.at_kw("ORDER"):
            self.advance()
            self.expect_kw("BY")
            order_by = self.column_list(allow_direction=True)
        if self.tok.kind == "punct" and self.tok.value == ";":
            self.advance()
        if self.tok.kind != "eof":
            self._maybe_unsupported()
            raise self.error(f"unexpected token {self.tok.value!r}")
        return select_items, tables, join_raw, conjuncts, group_by, order_by

    def table_name(self) -> str:
        t = self.tok
        if t.kind != "word":
            self._maybe_unsupported()
            raise self.error("expected table name")
        self.advance()
        if self.tok.kind == "word" or self.at_kw("AS"):
            raise self.unsupported("table alias")
        if t.value not in self.schema:
            raise SchemaError(f"unknown table {t.value!r} at position {t.pos}", t.pos)
        return t.value

    def column_name(self) -> tuple[str | None, str, int]:
        t = self.tok
        if t.kind != "word":
            self._maybe_unsupported()
            raise self.error("expected column name")
        self.advance()
        if self.tok.kind == "punct" and self.tok.value == ".":
            self.advance()
            c = self.tok
            if c.kind != "word":
                raise self.error("expected column name after '.'")
            self.advance()
            return t.value, c.value, t.pos
        if self.tok.kind == "punct" and self.tok.value == "(":
            raise self.unsupported(f"function call {t.value}()", t)
        return None, t.value, t.pos

    def select_list(self):
        items = []
        while True:
            if self.tok.kind == "punct" and self.tok.value == "*":
                items.append(("*", self.advance().pos))
            else:
                items.append(self.column_name())
            if self.tok.kind == "punct" and self.tok.value == ",":
                self.advance()
                continue
            return items

    def column_list(self, allow_direction: bool = False):
        cols = [self.column_name()]
        if allow_direction and self.at_kw("ASC", "DESC"):
            self.advance()
        while self.tok.kind == "punct" and self.tok.value == ",":
            self.advance()
            cols.append(self.column_name())
            if allow_direction and self.at_kw("ASC", "DESC"):
                self.advance()
        return cols

    def literal(self) -> str:
        t = self.tok
        if t.kind in ("num", "str"):
            self.advance()
            return t.value
        if t.kind == "word":
            raise self.unsupported("column-to-column comparison in WHERE", t)
        self._maybe_unsupported()
        raise self.error("expected literal")

    def conjunct(self):
        if self.tok.kind == "punct" and self.tok.value == "(":
            raise self.unsupported("parenthesized expression or subquery")
        col = self.column_name()
        t = self.tok
        if self.at_kw("BETWEEN"):
            self.advance()
            lo = self.literal()
            self.expect_kw("AND")
            hi = self.literal()
            return col, Op.RANGE, "between", (lo, hi)
        if t.kind == "op":
            self.advance()
            if t.value == "=":
                return col, Op.EQ, "=", (self.literal(),)
            if t.value in ("<", "<=", ">", ">="):
                return col, Op.RANGE, t.value, (self.literal(),)
            raise self.unsupported(f"operator {t.value}", t)
        self._maybe_unsupported()
        raise self.error("expected comparison operator or BETWEEN")


def _resolve(schema: Schema, tables: Sequence[str], raw, text: str) -> tuple[str, str]:
    table, column, pos = raw
    if table is not None:
        if table not in tables:
            raise SchemaError(f"column {table}.{column} references table not in FROM (position {pos})", pos)
        if column not in schema[table].columns:
            raise SchemaError(f"unknown column {table}.{column} (position {pos})", pos)
        return table, column
    owners = [t for t in tables if column in schema[t].columns]
    if not owners:
        raise SchemaError(f"unknown column {column!r} (position {pos})", pos)
    if len(owners) > 1:
        raise ParseError(f"ambiguous column {column!r}", pos, text)
    return owners[0], column


def parse_query(
    sql_text: str,
    schema: Schema,
    query_id: str = "q1",
    weight: float = 1.0,
    selectivities: Sequence[float] | Mapping[str, float] | None = None,
) -> LogicalQuery:
    """Parse one statement into a :class:`LogicalQuery`.

    ``selectivities`` overrides the defaults (``1/distinct`` for equality,
    0.1 for ranges), either positionally over the WHERE conjuncts or keyed by
    ``"table.column"``.
    """
    p = _Parser(sql_text, schema)
    select_items, tables, join_raw, conjuncts, group_by, order_by = p.parse()

    def ref(raw, role: Role) -> ColumnRef:
        t, c = _resolve(schema, tables, raw, sql_text)
        return ColumnRef(t, c, role)

    projected: list[ColumnRef] = []
    for item in select_items:
        if item[0] == "*":
            for t in tables:
                projected.extend(ColumnRef(t, c, Role.PROJECTED) for c in schema[t].columns)
        else:
            projected.append(ref(item, Role.PROJECTED))
    projected = list(dict.fromkeys(projected))

    join_pred = None
    if join_raw is not None:
        left, right = ref(join_raw[0], Role.JOIN), ref(join_raw[1], Role.JOIN)
        if left.table == right.table:
            raise UnsupportedConstruct("unsupported construct: join predicate within one table",
                                       join_raw[2].pos, sql_text)
        join_pred = (left, right)

    if isinstance(selectivities, Sequence) and len(selectivities) != len(conjuncts):
        raise ValueError(f"{len(selectivities)} selectivities given for {len(conjuncts)} predicates")
    preds = []
    for pos, (raw, op, comparator, values) in enumerate(conjuncts):
        role = Role.FILTER_EQ if op is Op.EQ else Role.FILTER_RANGE
        col = ref(raw, role)
        sel = None
        if isinstance(selectivities, Mapping):
            sel = selectivities.get(col.qualified)
        elif selectivities is not None:
            sel = selectivities[pos]
        if sel is None:
            if op is Op.EQ:
                sel = 1.0 / schema[col.table].column(col.column).distinct_count
            else:
                sel = DEFAULT_RANGE_SELECTIVITY
        preds.append(Predicate(col, op, sel, values, comparator))

    return LogicalQuery(
        id=query_id,
        tables=tuple(tables),
        predicates=tuple(preds),
        join_pred=join_pred,
        group_by=tuple(dict.fromkeys(ref(r, Role.GROUP_BY) for r in group_by)),
        order_by=tuple(dict.fromkeys(ref(r, Role.ORDER_BY) for r in order_by)),
        projected=tuple(projected),
        weight=weight,
    )


def _pred_sql(p: Predicate, placeholders: bool) -> str:
    vals = ["?"] * len(p.values) if placeholders else list(p.values)
    col = p.column.qualified
    if p.comparator == "between":
        return f"{col} BETWEEN {vals[0]} AND {vals[1]}"
    return f"{col} {p.comparator} {vals[0]}"


def to_sql(q: LogicalQuery, placeholders: bool = False) -> str:
    """Print ``q`` back as SQL with every column qualified."""
    parts = ["SELECT " + ", ".join(c.qualified for c in q.projected), "FROM " + q.tables[0]]
    if q.join_pred:
        a, b = q.join_pred
        parts.append(f"JOIN {q.tables[1]} ON {a.qualified} = {b.qualified}")
    if q.predicates:
        parts.append("WHERE " + " AND ".join(_pred_sql(p, placeholders) for p in q.predicates))
    if q.group_by:
        parts.append("GROUP BY " + ", ".join(c.qualified for c in q.group_by))
    if q.order_by:
        parts.append("ORDER BY " + ", ".join(c.qualified for c in q.order_by))
    return " ".join(parts)


def extract_indexable_columns(q: LogicalQuery) -> list[ColumnRef]:
    """Filter, join, group-by and order-by columns, one entry per column.

    A column playing several roles keeps its strongest one; entries are in
    order of first appearance.
    """
    best: dict[tuple[str, str], ColumnRef] = {}
    for ref in q.column_refs():
        if not ref.role.indexable:
            continue
        key = (ref.table, ref.column)
        cur = best.get(key)
        # reassigning an existing key keeps its first-appearance slot
        if cur is None or ref.role.priority < cur.role.priority:
            best[key] = ref
    return list(best.values())


@dataclass(frozen=True)
class QueryTemplate:
    template_id: str
    normalized_text: str
    binding_slots: tuple[tuple[int, Op], ...]


def templatize(q: LogicalQuery) -> QueryTemplate:
    text = to_sql(q, placeholders=True)
    tid = "t" + hashlib.sha1(text.encode("utf-8")).hexdigest()[:12]
    slots = tuple((i, p.op) for i, p in enumerate(q.predicates))
    return QueryTemplate(tid, text, slots)
