"""Engine adapter contract and the built-in deterministic virtual engine.

Costs are in abstract units; only ratios between them mean anything. The
virtual engine prices a query as the cheapest of a small set of physical
alternatives:

* table access: a full scan costs ``N``; a seek on index ``I`` costs
  ``log2(N) + s*N`` plus ``2*s*N`` of key lookups unless ``I`` covers every
  column the query touches on that table. ``s`` is the selectivity of the
  longest equality-matched key prefix, times one range predicate on the next
  key column.
* sorting: ``n*log2(max(n, 2))`` on the output rows, skipped when the chosen
  index delivers the ORDER BY (else GROUP BY) columns right after its
  equality prefix.
* two tables: a hash join (both accesses plus ``n1 + n2``) or an index
  nested loop probing an index led by the inner join column.

Because every configuration only adds alternatives to a minimum, cost is
monotone: ``C <= C'`` implies ``cost(q, C') <= cost(q, C)``.
"""

from __future__ import annotations

import hashlib
import math
import threading
from abc import ABC, abstractmethod
from contextlib import contextmanager
from dataclasses import dataclass
from statistics import NormalDist

from .errors import BudgetExhausted, CapabilityError
from .ir import (
    Configuration,
    IndexDef,
    LogicalQuery,
    Op,
    PlanDescriptor,
    Schema,
    TableAccess,
    TableStats,
)

_STD_NORMAL = NormalDist()


@dataclass(frozen=True)
class EngineCapabilities:
    supports_whatif: bool = True
    supports_execution: bool = True
    supports_plan_descriptor: bool = True
    supports_hypothetical_index: bool = True

    def __post_init__(self):
        if self.supports_plan_descriptor and not self.supports_whatif:
            raise ValueError("plan descriptors require what-if support")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class EngineConfig:
    lookup_penalty: float = 2.0
    #: std-dev of the log-normal estimate/runtime mismatch
    noise_sigma: float = 0.25
    #: systematic runtime bias per unit of lookup share, in units of sigma
    lookup_bias: float = 2.0


@dataclass(frozen=True)
class WhatIfResult:
    estimated_cost: float
    plan: PlanDescriptor | None
    from_cache: bool = False
    #: part of estimated_cost spent on key lookups of non-covering seeks
    lookup_cost: float = 0.0


class CallAccounting:
    """Thread-safe, monotone counters."""

    def __init__(self):
        self._lock = threading.Lock()
        self.whatif_calls = 0
        self.cache_hits = 0
        self.executions = 0

    def bump(self, name: str, by: int = 1) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + by)

    def snapshot(self) -> dict:
        with self._lock:
            return {"whatif_calls": self.whatif_calls, "cache_hits": self.cache_hits,
                    "executions": self.executions}


class EngineAdapter(ABC):
    """What the tuner needs from a database engine."""

    accounting: CallAccounting

    @property
    @abstractmethod
    def schema(self) -> Schema: ...

    @abstractmethod
    def capabilities(self) -> EngineCapabilities: ...

    @abstractmethod
    def optimize(self, q: LogicalQuery, config: Configuration) -> WhatIfResult: ...

    @abstractmethod
    def create_hypothetical_index(self, index: IndexDef) -> str: ...

    @abstractmethod
    def execute(self, q: LogicalQuery, config: Configuration, seed: int = 0) -> float: ...

    def get_stats(self, table: str) -> TableStats:
        return self.schema[table]

    @contextmanager
    def budget(self, max_calls: int | None):
        """Arm a what-if budget of ``max_calls`` further calls for the block."""
        yield


# ---------------------------------------------------------------------------
# pure costing


class _TableInfo:
    __slots__ = ("table", "rows", "log_rows", "eq_sel", "range_sel", "n_out", "referenced")

    def __init__(self, q: LogicalQuery, table: str, stats: TableStats):
        self.table = table
        self.rows = stats.rows
        self.log_rows = math.log2(stats.rows)
        self.eq_sel: dict[str, float] = {}
        self.range_sel: dict[str, float] = {}
        sel = 1.0
        for p in q.predicates:
            if p.column.table != table:
                continue
            bucket = self.eq_sel if p.op is Op.EQ else self.range_sel
            bucket[p.column.column] = bucket.get(p.column.column, 1.0) * p.selectivity
            sel *= p.selectivity
        self.n_out = stats.rows * sel
        self.referenced = q.referenced_columns(table)


class QueryInfo:
    """Per-query facts the cost formulas need, computed once per query."""

    __slots__ = ("tables", "sort_cols", "sort_is_group", "sort_table", "join")

    def __init__(self, q: LogicalQuery, schema: Schema):
        self.tables = {t: _TableInfo(q, t, schema[t]) for t in q.tables}
        for ref in q.column_refs():
            schema[ref.table].column(ref.column)
        sort_refs = q.order_by or q.group_by
        self.sort_is_group = not q.order_by and bool(q.group_by)
        self.sort_cols = tuple(r.column for r in sort_refs)
        owners = {r.table for r in sort_refs}
        self.sort_table = owners.pop() if len(owners) == 1 else None
        self.join = None
        if q.join_pred is not None:
            a, b = q.join_pred
            self.join = (a.table, a.column, schema[a.table].column(a.column).distinct_count,
                         b.table, b.column, schema[b.table].column(b.column).distinct_count)


def match_prefix(
    key: tuple[str, ...], info: _TableInfo, lead_sel: float | None = None
) -> tuple[int, int, float]:
    """Return ``(eq_len, matched_len, selectivity)`` for an index key.

    With ``lead_sel`` the first key column is treated as equality-bound with
    that selectivity (the join column of a nested-loop probe).
    """
    s = 1.0
    eq_len = 0
    if lead_sel is not None:
        s = lead_sel
        eq_len = 1
    eq = info.eq_sel
    while eq_len < len(key) and key[eq_len] in eq:
        s *= eq[key[eq_len]]
        eq_len += 1
    matched = eq_len
    if eq_len < len(key) and key[eq_len] in info.range_sel:
        s *= info.range_sel[key[eq_len]]
        matched += 1
    return eq_len, matched, s


def provides_order(key: tuple[str, ...], eq_len: int, qi: QueryInfo) -> bool:
    cols = qi.sort_cols
    if not cols:
        return False
    run = key[eq_len:eq_len + len(cols)]
    if len(run) < len(cols):
        return False
    return set(run) == set(cols) if qi.sort_is_group else tuple(run) == cols


def sort_cost(n: float) -> float:
    return n * math.log2(max(n, 2.0))


class _Access:
    __slots__ = ("cost", "lookup", "access", "eq_len")

    def __init__(self, cost, lookup, access, eq_len):
        self.cost = cost
        self.lookup = lookup
        self.access = access
        self.eq_len = eq_len


def _access_options(info: _TableInfo, indexes: list[IndexDef], penalty: float) -> list[_Access]:
    n = info.rows
    opts = [_Access(float(n), 0.0, TableAccess(info.table, "full_scan"), 0)]
    for ix in indexes:
        eq_len, matched, s = match_prefix(ix.key_columns, info)
        covering = info.referenced <= ix.columns
        lookup = 0.0 if covering else penalty * s * n
        cost = info.log_rows + s * n + lookup
        opts.append(_Access(cost, lookup, TableAccess(info.table, "index_seek", ix.id, matched,
                                                      covering), eq_len))
    return opts


def plan_query(
    q: LogicalQuery, config: Configuration, schema: Schema, qi: QueryInfo | None = None,
    penalty: float = 2.0,
) -> tuple[float, PlanDescriptor, float]:
    """Cheapest plan for ``q`` under ``config``: ``(cost, plan, lookup_cost)``.

    Alternatives are tried in a fixed order and only a strictly cheaper one
    replaces the incumbent, so ties always resolve the same way.
    """
    qi = qi or QueryInfo(q, schema)
    by_table: dict[str, list[IndexDef]] = {t: [] for t in q.tables}
    for ix in config:
        if ix.table in by_table:
            by_table[ix.table].append(ix)

    if len(q.tables) == 1:
        t = q.tables[0]
        info = qi.tables[t]
        best = None
        for opt in _access_options(info, by_table[t], penalty):
            elim = (qi.sort_table == t and opt.access.kind == "index_seek"
                    and provides_order(config.get(opt.access.index_id).key_columns,
                                       opt.eq_len, qi))
            total = opt.cost
            if qi.sort_cols and not elim:
                total += sort_cost(info.n_out)
            if best is None or total < best[0]:
                best = (total, PlanDescriptor((opt.access,), elim, None), opt.lookup)
        return best

    ta, ca, da, tb, cb, db = qi.join
    infos = {ta: qi.tables[ta], tb: qi.tables[tb]}
    opts = {t: _access_options(infos[t], by_table[t], penalty) for t in (ta, tb)}
    n_join = infos[ta].n_out * infos[tb].n_out / max(da, db, 1)
    sort_rows = sort_cost(n_join) if qi.sort_cols else 0.0

    # hash join: order is destroyed, so each side takes its cheapest access
    best_side = {}
    for t in (ta, tb):
        cur = None
        for opt in opts[t]:
            if cur is None or opt.cost < cur.cost:
                cur = opt
        best_side[t] = cur
    a, b = best_side[ta], best_side[tb]
    total = a.cost + b.cost + infos[ta].n_out + infos[tb].n_out + sort_rows
    best = (total, PlanDescriptor((a.access, b.access), False, "hash"), a.lookup + b.lookup)

    # index nested loop, each side as outer
    for outer, inner, inner_col, inner_distinct in ((ta, tb, cb, db), (tb, ta, ca, da)):
        iinfo = infos[inner]
        probes = []
        for ix in by_table[inner]:
            if ix.key_columns[0] != inner_col:
                continue
            _, matched, s = match_prefix(ix.key_columns, iinfo, lead_sel=1.0 / inner_distinct)
            covering = iinfo.referenced <= ix.columns
            lookup = 0.0 if covering else penalty * s * iinfo.rows
            probes.append((iinfo.log_rows + s * iinfo.rows + lookup, lookup,
                           TableAccess(inner, "index_seek", ix.id, matched, covering)))
        if not probes:
            continue
        n_outer = infos[outer].n_out
        for oopt in opts[outer]:
            elim = (qi.sort_table == outer and oopt.access.kind == "index_seek"
                    and provides_order(config.get(oopt.access.index_id).key_columns,
                                       oopt.eq_len, qi))
            for probe_cost, probe_lookup, iaccess in probes:
                total = oopt.cost + n_outer * probe_cost
                if qi.sort_cols and not elim:
                    total += sort_rows
                if total < best[0]:
                    accesses = tuple(sorted((oopt.access, iaccess), key=lambda x: x.table))
                    best = (total, PlanDescriptor(accesses, elim, "index_nested_loop"),
                            oopt.lookup + n_outer * probe_lookup)
    return best


# ---------------------------------------------------------------------------


class VirtualEngine(EngineAdapter):
    """Deterministic in-process optimizer and execution simulator.

    Every index in a configuration passed to :meth:`optimize` is registered as
    hypothetical on first use. Results are cached per (query id, configuration
    restricted to the query's tables); only cache misses count as what-if calls.
    """

    def __init__(self, schema: Schema, config: EngineConfig | None = None):
        self._schema = schema
        self.config = config or EngineConfig()
        self.accounting = CallAccounting()
        self._lock = threading.RLock()
        self._cache: dict[tuple[str, str], tuple[float, PlanDescriptor, float]] = {}
        self._qinfo: dict[str, tuple[LogicalQuery, QueryInfo]] = {}
        self._hypothetical: dict[str, IndexDef] = {}
        self._limit: int | None = None

    @property
    def schema(self) -> Schema:
        return self._schema

    def capabilities(self) -> EngineCapabilities:
        return EngineCapabilities(True, True, True, True)

    def create_hypothetical_index(self, index: IndexDef) -> str:
        self._schema.validate_index(index)
        with self._lock:
            self._hypothetical.setdefault(index.id, index)
        return index.id

    @property
    def hypothetical_indexes(self) -> tuple[str, ...]:
        return tuple(sorted(self._hypothetical))

    def _register(self, config: Configuration) -> None:
        for ix in config:
            if ix.id not in self._hypothetical:
                self.create_hypothetical_index(ix)

    def _info(self, q: LogicalQuery) -> QueryInfo:
        hit = self._qinfo.get(q.id)
        if hit is not None and (hit[0] is q or hit[0] == q):
            return hit[1]
        qi = QueryInfo(q, self._schema)
        self._qinfo[q.id] = (q, qi)
        return qi

    def _key(self, q: LogicalQuery, config: Configuration) -> tuple[tuple[str, str], Configuration]:
        restricted = config.restrict(q.tables)
        return (q.id, restricted.signature), restricted

    def peek(self, q: LogicalQuery, config: Configuration) -> WhatIfResult | None:
        """Cached result without issuing a call, or None."""
        key, _ = self._key(q, config)
        hit = self._cache.get(key)
        if hit is None:
            return None
        return WhatIfResult(hit[0], hit[1], True, hit[2])

    def optimize(self, q: LogicalQuery, config: Configuration) -> WhatIfResult:
        key, restricted = self._key(q, config)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self.accounting.bump("cache_hits")
                return self._result(hit, True)
            if self._limit is not None and self.accounting.whatif_calls + 1 > self._limit:
                raise BudgetExhausted(f"what-if budget of {self._limit} calls exhausted")
            self._register(restricted)
            hit = plan_query(q, restricted, self._schema, self._info(q), self.config.lookup_penalty)
            self._cache[key] = hit
            self.accounting.bump("whatif_calls")
        return self._result(hit, False)

    def _result(self, hit, from_cache: bool) -> WhatIfResult:
        return WhatIfResult(hit[0], hit[1], from_cache, hit[2])

    def _plan_uncounted(self, q: LogicalQuery, config: Configuration):
        key, restricted = self._key(q, config)
        with self._lock:
            hit = self._cache.get(key)
            if hit is None:
                self._register(restricted)
                hit = plan_query(q, restricted, self._schema, self._info(q),
                                 self.config.lookup_penalty)
        return hit

    def execute(self, q: LogicalQuery, config: Configuration, seed: int = 0) -> float:
        """Simulated runtime: the estimate times a per-(template, plan) mismatch.

        The mismatch is ``exp(sigma * (z + lookup_bias * lookup_share))`` where
        ``z`` is a standard normal drawn from a hash of (seed, template, plan
        signature) and ``lookup_share`` is the fraction of the estimate spent
        on key lookups. ``sigma = 0`` makes runtime equal the estimate.
        """
        if not self.capabilities().supports_execution:
            raise CapabilityError("engine does not support execution")
        cost, plan, lookup = self._plan_uncounted(q, config)
        self.accounting.bump("executions")
        sigma = self.config.noise_sigma
        if sigma == 0:
            return cost
        z = plan_noise(seed, q.template_id, plan.signature)
        share = lookup / cost if cost > 0 else 0.0
        return cost * math.exp(sigma * (z + self.config.lookup_bias * share))

    @contextmanager
    def budget(self, max_calls: int | None):
        if max_calls is None:
            yield
            return
        with self._lock:
            previous = self._limit
            limit = self.accounting.whatif_calls + max_calls
            self._limit = limit if previous is None else min(previous, limit)
        try:
            yield
        finally:
            with self._lock:
                self._limit = previous

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()


def plan_noise(seed: int, template_id: str, signature: str) -> float:
    """Deterministic standard-normal variate keyed by (seed, template, plan)."""
    digest = hashlib.sha256(f"{seed}|{template_id}|{signature}".encode()).digest()
    u = (int.from_bytes(digest[:8], "big") + 0.5) / 2.0 ** 64
    return _STD_NORMAL.inv_cdf(u)


class DegradedEngine(VirtualEngine):
    """A virtual engine that hides plan descriptors, for planner adaptivity tests."""

    def capabilities(self) -> EngineCapabilities:
        return EngineCapabilities(True, True, False, True)

    def _result(self, hit, from_cache: bool) -> WhatIfResult:
        return WhatIfResult(hit[0], None, from_cache, hit[2])



__all__ = [
    "CallAccounting", "DegradedEngine", "EngineAdapter", "EngineCapabilities", "EngineConfig",
    "QueryInfo", "VirtualEngine", "WhatIfResult", "match_prefix", "plan_noise", "plan_query",
    "provides_order", "sort_cost",
]
