"""Deterministic synthetic schemas, statistics and workloads.

Row counts are log-uniform, so seek-versus-scan trade-offs vary from table to
table; queries are drawn from a fixed set of templates with varied literal
bindings (and therefore varied selectivities).
"""

from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass, field

from .ir import ColumnStats, LogicalQuery, Schema, TableStats, Workload
from .sql import parse_query, templatize


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int = 0
    tables: tuple[int, int] = (3, 6)
    rows: tuple[float, float] = (1e3, 1e7)
    columns: tuple[int, int] = (5, 10)
    distinct_skew: float = 4.0
    queries: int = 50
    templates: int = 10
    predicates: tuple[int, int] = (1, 3)
    join_probability: float = 0.4
    range_probability: float = 0.35
    range_selectivity: tuple[float, float] = (1e-3, 0.5)
    order_probability: float = 0.4
    group_probability: float = 0.3
    projected: tuple[int, int] = (1, 3)
    #: "none", "periodic:<buckets>" or "bursty"
    arrival: str = "none"
    bucket_seconds: float = 3600.0
    arrival_buckets: int = 96
    name_prefix: str = "t"

    def __post_init__(self):
        for name in ("tables", "rows", "columns", "predicates", "projected", "range_selectivity"):
            lo, hi = getattr(self, name)
            if lo > hi or lo <= 0:
                raise ValueError(f"{name} range {lo}..{hi} is empty")
        for name in ("join_probability", "range_probability", "order_probability",
                     "group_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.queries < 1 or self.templates < 1:
            raise ValueError("need at least one query and one template")
        if not (self.arrival in ("none", "bursty") or self.arrival.startswith("periodic:")):
            raise ValueError(f"unknown arrival pattern {self.arrival!r}")

    def replace(self, **changes) -> "GeneratorSpec":
        d = asdict(self)
        d.update(changes)
        return GeneratorSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class GeneratedDatabase:
    spec: GeneratorSpec
    schema: Schema
    workload: Workload
    rows: list[dict] = field(default_factory=list)

    def workload_document(self) -> dict:
        return {"queries": self.rows}


@dataclass
class _Template:
    tables: list[str]
    join: tuple[str, str] | None  # (left qualified col, right qualified col)
    preds: list[tuple[str, str]]  # (qualified column, "eq" | "range")
    group_by: list[str]
    order_by: list[str]
    projected: list[str]


def _make_schema(spec: GeneratorSpec, rng: random.Random) -> Schema:
    n_tables = rng.randint(*spec.tables)
    lo, hi = math.log(spec.rows[0]), math.log(spec.rows[1])
    tables = []
    for t in range(n_tables):
        rows = int(round(math.exp(rng.uniform(lo, hi))))
        cols = {"c0": ColumnStats("c0", 8, rows)}
        for c in range(1, rng.randint(*spec.columns)):
            width = rng.choice((4, 4, 8, 8, 16, 32))
            exponent = rng.random() ** spec.distinct_skew
            distinct = max(1, min(rows, int(round(rows ** exponent))))
            cols[f"c{c}"] = ColumnStats(f"c{c}", width, distinct)
        tables.append(TableStats(f"{spec.name_prefix}{t}", rows, cols))
    return Schema(tables)


def _make_template(spec: GeneratorSpec, schema: Schema, rng: random.Random) -> _Template:
    names = list(schema)
    first = rng.choice(names)
    tables = [first]
    join = None
    if len(names) > 1 and rng.random() < spec.join_probability:
        second = rng.choice([n for n in names if n != first])
        tables.append(second)
        fk = rng.choice([c for c in schema[first].columns if c != "c0"] or ["c0"])
        join = (f"{first}.{fk}", f"{second}.c0")
    pool = [f"{t}.{c}" for t in tables for c in schema[t].columns if c != "c0"]
    if join:
        pool = [c for c in pool if c != join[0]]
    k = min(rng.randint(*spec.predicates), len(pool))
    pred_cols = rng.sample(pool, k)
    preds = [(c, "range" if rng.random() < spec.range_probability else "eq") for c in pred_cols]
    group_by, order_by = [], []
    owner = rng.choice(tables)
    owner_cols = [f"{owner}.{c}" for c in schema[owner].columns]
    if rng.random() < spec.group_probability:
        group_by = rng.sample(owner_cols, min(len(owner_cols), rng.randint(1, 2)))
    elif rng.random() < spec.order_probability:
        order_by = rng.sample(owner_cols, min(len(owner_cols), rng.randint(1, 2)))
    all_cols = [f"{t}.{c}" for t in tables for c in schema[t].columns]
    projected = rng.sample(all_cols, min(len(all_cols), rng.randint(*spec.projected)))
    if group_by:
        projected = list(dict.fromkeys(group_by + projected))[: max(len(group_by), len(projected))]
    return _Template(tables, join, preds, group_by, order_by, projected)


def _bind(spec: GeneratorSpec, tpl: _Template, schema: Schema, rng: random.Random) -> tuple[str, list[float]]:
    parts = [f"SELECT {', '.join(tpl.projected)} FROM {tpl.tables[0]}"]
    if tpl.join:
        parts.append(f"JOIN {tpl.tables[1]} ON {tpl.join[0]} = {tpl.join[1]}")
    conds, sels = [], []
    for col, op in tpl.preds:
        t, c = col.split(".")
        stats = schema[t]
        distinct = stats.columns[c].distinct_count
        if op == "eq":
            # skewed value frequencies around the uniform 1/distinct
            sel = min(1.0, math.exp(rng.gauss(0.0, 1.0)) / distinct)
            conds.append(f"{col} = {rng.randrange(distinct)}")
        else:
            lo_s, hi_s = spec.range_selectivity
            sel = math.exp(rng.uniform(math.log(lo_s), math.log(hi_s)))
            lo = rng.randrange(max(1, distinct))
            hi = lo + max(1, int(sel * distinct))
            conds.append(f"{col} BETWEEN {lo} AND {hi}")
        sels.append(sel)
    if conds:
        parts.append("WHERE " + " AND ".join(conds))
    if tpl.group_by:
        parts.append("GROUP BY " + ", ".join(tpl.group_by))
    if tpl.order_by:
        parts.append("ORDER BY " + ", ".join(tpl.order_by))
    return " ".join(parts), sels


def _arrival_times(spec: GeneratorSpec, template_of: list[int], rng: random.Random) -> list[float]:
    n_buckets = spec.arrival_buckets
    if spec.arrival.startswith("periodic:"):
        period = int(spec.arrival.split(":", 1)[1])
        phases = {t: rng.uniform(0, 2 * math.pi) for t in set(template_of)}

        def intensity(tidx, b):
            return 1.0 + 0.8 * math.sin(2 * math.pi * b / period + phases[tidx])
    else:
        bursts = {t: rng.sample(range(n_buckets), max(1, n_buckets // 12)) for t in set(template_of)}

        def intensity(tidx, b):
            return 8.0 if b in bursts[tidx] else 1.0
    out = []
    for tidx in template_of:
        weights = [intensity(tidx, b) for b in range(n_buckets)]
        b = rng.choices(range(n_buckets), weights=weights)[0]
        out.append((b + rng.random()) * spec.bucket_seconds)
    return out


def generate(spec: GeneratorSpec) -> GeneratedDatabase:
    rng = random.Random(spec.seed)
    schema = _make_schema(spec, rng)
    templates: list[_Template] = []
    seen: set[str] = set()
    attempts = 0
    while len(templates) < spec.templates:
        tpl = _make_template(spec, schema, rng)
        sql, sels = _bind(spec, tpl, schema, random.Random(0))
        tid = templatize(parse_query(sql, schema, selectivities=sels)).template_id
        attempts += 1
        if tid in seen and attempts < 50 * spec.templates:
            continue
        seen.add(tid)
        templates.append(tpl)

    template_of = list(range(min(spec.templates, spec.queries)))
    # remaining instances follow a mild Zipf over templates
    zipf = [1.0 / (i + 1) ** 0.8 for i in range(spec.templates)]
    template_of += rng.choices(range(spec.templates), weights=zipf,
                               k=spec.queries - len(template_of))
    arrivals = None if spec.arrival == "none" else _arrival_times(spec, template_of, rng)

    queries: list[LogicalQuery] = []
    rows = []
    width = len(str(spec.queries))
    for i, tidx in enumerate(template_of):
        qid = f"q{i + 1:0{width}d}"
        sql, sels = _bind(spec, templates[tidx], schema, rng)
        queries.append(parse_query(sql, schema, query_id=qid, selectivities=sels))
        row = {"id": qid, "sql": sql, "weight": 1.0, "predicate_selectivities": sels}
        if arrivals is not None:
            row["arrival_ts"] = arrivals[i]
        rows.append(row)
    return GeneratedDatabase(spec, schema, Workload(queries), rows)
