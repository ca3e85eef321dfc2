"""Shared plumbing for search strategies: costers, budgets, results."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

from ..engine import EngineAdapter
from ..errors import BudgetExhausted
from ..ir import (
    Configuration,
    IndexDef,
    LogicalQuery,
    Schema,
    TuningConstraints,
    Workload,
    estimate_index_size,
)
from ..sql import extract_indexable_columns


class Coster(Protocol):
    engine: EngineAdapter

    def cost(self, q: LogicalQuery, config: Configuration) -> float: ...


class WhatIfCoster:
    """Every costing goes to the engine (its cache absorbs repeats)."""

    def __init__(self, engine: EngineAdapter):
        self.engine = engine

    def cost(self, q: LogicalQuery, config: Configuration) -> float:
        return self.engine.optimize(q, config).estimated_cost


def workload_cost(W: Iterable[LogicalQuery], config: Configuration, coster: Coster) -> float:
    """``sum(weight(q) * cost(q, config))``; the engine caches per relevant subset."""
    return sum(q.weight * coster.cost(q, config) for q in W)


@dataclass(frozen=True)
class SearchBudget:
    max_whatif_calls: int | None = None
    wall_clock_seconds: float | None = None

    def __post_init__(self):
        if self.max_whatif_calls is not None and self.max_whatif_calls < 0:
            raise ValueError("what-if budget must be nonnegative")

    @property
    def unbounded(self) -> bool:
        return self.max_whatif_calls is None and self.wall_clock_seconds is None


UNBOUNDED = SearchBudget()


@dataclass
class SearchResult:
    strategy: str
    configuration: Configuration
    cost_before: float
    cost_after: float
    per_query: dict[str, tuple[float, float]]
    whatif_calls: int
    trace: list[tuple[int, float]] = field(default_factory=list)
    budget_exhausted: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def improvement(self) -> float:
        if self.cost_before <= 0:
            return 0.0
        return min(1.0, max(0.0, (self.cost_before - self.cost_after) / self.cost_before))

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "indexes": [ix.to_dict() for ix in self.configuration],
            "cost_before": self.cost_before, "cost_after": self.cost_after,
            "improvement": self.improvement, "whatif_calls": self.whatif_calls,
            "budget_exhausted": self.budget_exhausted,
            "trace": [list(t) for t in self.trace],
        }


class _Stop(Exception):
    """Internal: the wall-clock limit passed."""


class SearchContext:
    """What one strategy run sees: queries, constraints, budget and call accounting."""

    def __init__(self, W: Workload | Sequence[LogicalQuery], coster: Coster,
                 constraints: TuningConstraints, budget: SearchBudget = UNBOUNDED,
                 baseline: Mapping[str, float] | None = None):
        self.queries = list(W)
        if baseline is None and isinstance(W, Workload):
            baseline = W.baseline_cost
        self.coster = coster
        self.engine = coster.engine
        self.schema: Schema = self.engine.schema
        self.constraints = constraints
        self.budget = budget
        self._calls0 = self.engine.accounting.whatif_calls
        self._deadline = (time.monotonic() + budget.wall_clock_seconds
                          if budget.wall_clock_seconds is not None else None)
        self.exhausted = False
        self._baseline = ({q.id: float(baseline[q.id]) for q in self.queries}
                          if baseline is not None else None)
        self._by_table: dict[str, list[LogicalQuery]] = {}
        self._lead_users: dict[tuple[str, str], list[LogicalQuery]] = {}
        for q in self.queries:
            for t in q.tables:
                self._by_table.setdefault(t, []).append(q)
            for c in {(c.table, c.column) for c in extract_indexable_columns(q)}:
                self._lead_users.setdefault(c, []).append(q)

    @property
    def calls(self) -> int:
        return self.engine.accounting.whatif_calls - self._calls0

    @contextmanager
    def armed(self):
        """Arm the what-if budget (counted from the start of the run)."""
        limit = self.budget.max_whatif_calls
        with self.engine.budget(None if limit is None else max(0, limit - self.calls)):
            yield

    def check_clock(self) -> None:
        if self._deadline is not None and time.monotonic() > self._deadline:
            raise _Stop()

    def cost(self, q: LogicalQuery, config: Configuration) -> float:
        self.check_clock()
        return self.coster.cost(q, config)

    def baseline(self) -> dict[str, float]:
        """Per-query costs under the empty configuration.

        Computed on first use (those calls count against the run's budget)
        unless the workload already carries them. :func:`run_guarded` strategies
        compute it first, so a budget too small for it raises BudgetExhausted.
        """
        if self._baseline is None:
            self._baseline = {q.id: self.cost(q, Configuration()) for q in self.queries}
        return self._baseline

    def total(self, per_query: dict[str, float]) -> float:
        return sum(q.weight * per_query[q.id] for q in self.queries)

    def affected(self, index: IndexDef) -> list[LogicalQuery]:
        """Queries whose cost can change when ``index`` is added.

        An index only offers a cheaper access path through its leading key
        column, so queries that never name that column are unaffected.
        """
        return self._lead_users.get((index.table, index.key_columns[0]), [])

    def on_table(self, table: str) -> list[LogicalQuery]:
        return self._by_table.get(table, [])

    def size(self, index: IndexDef) -> int:
        return estimate_index_size(index, self.schema[index.table])

    def fits(self, config: Configuration, index: IndexDef | None = None) -> bool:
        n = len(config) + (index is not None and index not in config)
        if n > self.constraints.max_indexes:
            return False
        cap = self.constraints.storage_budget_bytes
        if cap is None:
            return True
        total = sum(self.size(ix) for ix in config)
        if index is not None and index not in config:
            total += self.size(index)
        return total <= cap

    def result(self, strategy: str, config: Configuration, per_query: dict[str, float],
               trace: list[tuple[int, float]], **extra) -> SearchResult:
        base = self.baseline()
        return SearchResult(
            strategy, config, self.total(base), self.total(per_query),
            {q.id: (base[q.id], per_query[q.id]) for q in self.queries},
            self.calls, trace, self.exhausted, extra)

    def improvement(self, total: float) -> float:
        before = self.total(self.baseline())
        return 0.0 if before <= 0 else min(1.0, max(0.0, (before - total) / before))


def run_guarded(ctx: SearchContext, body):
    """Run ``body()`` under the armed budget, flagging exhaustion instead of raising.

    The baseline is costed first; if even that does not fit, the request is
    infeasible and BudgetExhausted propagates.
    """
    with ctx.armed():
        ctx.baseline()
    try:
        with ctx.armed():
            body()
    except (BudgetExhausted, _Stop):
        ctx.exhausted = True
