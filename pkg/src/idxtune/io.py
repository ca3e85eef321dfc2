"""File ingestion: schema JSON, workload JSON or .sql, with located diagnostics.

Workload JSON is ``{"queries": [{id, sql, weight?, arrival_ts?,
predicate_selectivities?}, ...]}`` (a bare list is accepted too). A ``.sql``
file is a sequence of ``;``-terminated statements that get frontend default
selectivities and ids ``q1, q2, ...``. Schema JSON is ``{"tables": [{name,
rows, columns: [{name, width, distinct}]}]}``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import IdxTuneError, InputError, ParseError, SchemaError
from .ir import LogicalQuery, Schema, Workload
from .sql import parse_query


@dataclass(frozen=True)
class WorkloadRow:
    id: str
    sql: str
    weight: float = 1.0
    arrival_ts: float | None = None
    predicate_selectivities: Sequence[float] | Mapping[str, float] | None = None
    #: where the statement text starts: (path, line, column), 1-based
    origin: tuple[str, int, int] = ("<input>", 1, 1)


@dataclass
class WorkloadSource:
    rows: list[WorkloadRow]
    path: str = "<input>"
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    return line, offset - (text.rfind("\n", 0, offset) + 1) + 1


def read_json(path: str | Path) -> Any:
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read file: {exc.strerror}", path) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc.msg}", path, exc.lineno, exc.colno) from None


def _locate_key(text: str, needle: str) -> tuple[int | None, int | None]:
    i = text.find(needle)
    return _line_col(text, i) if i >= 0 else (None, None)


def schema_from_document(doc: Any, path: str = "<input>") -> Schema:
    if not isinstance(doc, Mapping) or not isinstance(doc.get("tables"), list):
        raise InputError('schema must be an object with a "tables" list', path)
    for i, t in enumerate(doc["tables"]):
        where = f"tables[{i}]"
        if not isinstance(t, Mapping):
            raise InputError(f"{where} must be an object", path)
        for key in ("name", "rows", "columns"):
            if key not in t:
                raise InputError(f'{where} is missing "{key}"', path)
        for j, c in enumerate(t["columns"]):
            for key in ("name", "width", "distinct"):
                if not isinstance(c, Mapping) or key not in c:
                    raise InputError(f'{where}.columns[{j}] is missing "{key}"', path)
    try:
        return Schema.from_dict(doc)
    except (SchemaError, TypeError, ValueError) as exc:
        raise InputError(f"invalid schema: {exc}", path) from None


def load_schema(path: str | Path) -> Schema:
    return schema_from_document(read_json(path), str(path))


def _rows_from_document(doc: Any, path: str, text: str = "") -> list[WorkloadRow]:
    items = doc.get("queries") if isinstance(doc, Mapping) else doc
    if not isinstance(items, list):
        raise InputError('workload must be a list of queries or {"queries": [...]}', path)
    rows = []
    for i, item in enumerate(items):
        if not isinstance(item, Mapping) or "sql" not in item:
            raise InputError(f'queries[{i}] must be an object with "sql"', path)
        qid = str(item.get("id", f"q{i + 1}"))
        line, col = _locate_key(text, json.dumps(item["sql"])) if text else (None, None)
        try:
            weight = float(item.get("weight", 1.0))
            ts = item.get("arrival_ts")
            ts = None if ts is None else float(ts)
        except (TypeError, ValueError):
            raise InputError(f"queries[{i}] ({qid}): weight and arrival_ts must be numbers",
                             path, line) from None
        rows.append(WorkloadRow(qid, str(item["sql"]), weight, ts,
                                item.get("predicate_selectivities"), (path, line or 1, col or 1)))
    return rows


_STATEMENT = re.compile(r"[^;]+")


_COMMENT = re.compile(r"--[^\n]*")


def _rows_from_sql(text: str, path: str) -> list[WorkloadRow]:
    # blank out comments in place so offsets still map to file positions
    text = _COMMENT.sub(lambda m: " " * len(m.group(0)), text)
    rows = []
    for m in _STATEMENT.finditer(text):
        body = m.group(0)
        if not body.strip():
            continue
        lead = len(body) - len(body.lstrip())
        line, col = _line_col(text, m.start() + lead)
        rows.append(WorkloadRow(f"q{len(rows) + 1}", body.strip(), origin=(path, line, col)))
    return rows


def load_workload_source(path: str | Path) -> WorkloadSource:
    path = str(path)
    if path.endswith(".sql"):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"cannot read file: {exc.strerror}", path) from None
        return WorkloadSource(_rows_from_sql(text, path), path)
    doc = read_json(path)
    return WorkloadSource(_rows_from_document(doc, path, Path(path).read_text()), path)


def source_from_document(doc: Any, path: str = "<input>") -> WorkloadSource:
    return WorkloadSource(_rows_from_document(doc, path), path)


def parse_workload(source: WorkloadSource, schema: Schema) -> Workload:
    """Parse every row; errors point at the statement's file line and column."""
    queries: list[LogicalQuery] = []
    seen: set[str] = set()
    for row in source.rows:
        path, line, col = row.origin
        if row.id in seen:
            raise InputError(f"duplicate query id {row.id!r}", path, line)
        seen.add(row.id)
        try:
            queries.append(parse_query(row.sql, schema, row.id, row.weight,
                                       row.predicate_selectivities))
        except (ParseError, SchemaError) as exc:
            if exc.position is not None:
                # statements are stripped copies of the file text starting at origin
                dl, dc = _line_col(row.sql, exc.position)
                line, col = line + dl - 1, (col + dc - 1) if dl == 1 else dc
            raise InputError(f"{row.id}: {exc.message}", path, line, col) from None
        except (IdxTuneError, ValueError, TypeError) as exc:
            raise InputError(f"{row.id}: {exc}", path, line, col) from None
    return Workload(queries)


def arrivals(source: WorkloadSource, workload: Workload) -> list[tuple[str, float]]:
    """(template_id, timestamp) for every row that carries one."""
    tid = {q.id: q.template_id for q in workload}
    return [(tid[r.id], r.arrival_ts) for r in source.rows if r.arrival_ts is not None]
