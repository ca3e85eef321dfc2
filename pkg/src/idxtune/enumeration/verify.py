"""QPR verification of a recommended configuration.

The final configuration is checked query by query: the QPR model compares
each query's baseline plan with its plan under the recommendation. While some
query is predicted to regress, an index its plan uses is vetoed and the
configuration is re-costed and re-checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..engine import EngineAdapter
from ..errors import CapabilityError
from ..ir import Configuration, LogicalQuery
from ..ml.qpr import QprModel, qpr_predict, query_log2_rows
from .base import Coster, SearchResult, WhatIfCoster


@dataclass
class VerificationReport:
    vetoed: list[dict] = field(default_factory=list)
    #: per query id: the final pass's prediction for the kept configuration
    predictions: dict[str, dict] = field(default_factory=dict)
    #: queries still predicted to regress because no veto lowered the total
    waived: list[str] = field(default_factory=list)
    passes: int = 0
    whatif_calls: int = 0

    def to_dict(self) -> dict:
        return {"vetoed": self.vetoed, "waived": self.waived, "predictions": self.predictions,
                "passes": self.passes, "whatif_calls": self.whatif_calls}


def _require_plans(engine: EngineAdapter) -> None:
    if not engine.capabilities().supports_plan_descriptor:
        raise CapabilityError("QPR verification needs plan descriptors")


def _measured_baseline(engine: EngineAdapter, queries, exec_seed: int) -> dict[str, float | None]:
    # the deployed (empty) configuration's telemetry; absent without execution support
    if not engine.capabilities().supports_execution:
        return {q.id: None for q in queries}
    return {q.id: engine.execute(q, Configuration(), exec_seed) for q in queries}


def verify_no_regression(result: SearchResult, qpr: QprModel, engine: EngineAdapter, W,
                         coster: Coster | None = None, exec_seed: int = 0,
                         policy: str = "net", min_gain: float = 0.05) -> tuple[SearchResult, VerificationReport]:
    """Veto indexes implicated in predicted regressions; returns (adjusted, report).

    Indexes are tried in order of how many regressing plans use them (ties
    by smallest id). Under ``policy="strict"`` the first one is always
    vetoed, so no predicted regression survives. Under ``policy="net"`` a
    veto must also lower the predicted measured workload cost (each query's
    measured baseline times its predicted ratio) by more than the ``min_gain``
    fraction of the affected queries' predicted cost; regressions no veto can pay
    for are kept and reported as waived. Each pass removes one index or
    stops, so there are at most ``|C| + 1`` passes.
    """
    if policy not in ("net", "strict"):
        raise ValueError(f"unknown verification policy {policy!r}")
    _require_plans(engine)
    queries: list[LogicalQuery] = list(W)
    coster = coster or WhatIfCoster(engine)
    calls0 = engine.accounting.whatif_calls
    measured_old = _measured_baseline(engine, queries, exec_seed)
    rows = {q.id: query_log2_rows(q, engine.schema) for q in queries}
    before = {qid: b for qid, (b, _) in result.per_query.items()}
    after = {qid: a for qid, (_, a) in result.per_query.items()}
    report = VerificationReport()

    def check(q: LogicalQuery, config: Configuration):
        old = engine.optimize(q, Configuration())
        new = engine.optimize(q, config)
        if new.plan.signature == old.plan.signature:
            return None, new
        return qpr_predict(qpr, old, new, rows[q.id], measured_old[q.id]), new

    def predicted_runtime(q: LogicalQuery, pred) -> float:
        base = measured_old[q.id] if measured_old[q.id] is not None else before[q.id]
        return q.weight * base * (math.exp(pred.log_ratio) if pred is not None else 1.0)

    config = result.configuration
    while True:
        report.passes += 1
        blame: dict[str, list[str]] = {}
        preds = {}
        report.predictions = {}
        for q in queries:
            p, new = check(q, config)
            preds[q.id] = p
            if p is None:
                continue
            report.predictions[q.id] = {"log_ratio": p.log_ratio, "probability": p.probability,
                                        "regression": p.regression}
            if p.regression:
                for ix_id in new.plan.index_ids():
                    blame.setdefault(ix_id, []).append(q.id)
        if not blame:
            break
        veto = None
        for ix_id in sorted(blame, key=lambda k: (-len(blame[k]), k)):
            if policy == "strict":
                veto = ix_id
                break
            trial = config.remove(ix_id)
            table = config.get(ix_id).table
            touched = [q for q in queries if table in q.tables]
            now = sum(predicted_runtime(q, preds[q.id]) for q in touched)
            then = sum(predicted_runtime(q, check(q, trial)[0]) for q in touched)
            if then < now * (1.0 - min_gain):
                veto = ix_id
                break
        if veto is None:
            report.waived = sorted(q for qs in blame.values() for q in qs)
            break
        report.vetoed.append({"index": veto, "ddl": config.get(veto).ddl(),
                              "queries": sorted(blame[veto]),
                              "reason": f"predicted regression > {qpr.delta:.0%} on "
                                        f"{len(blame[veto])} queries"})
        dropped = config.get(veto)
        config = config.remove(veto)
        for q in queries:
            if dropped.table in q.tables:
                after[q.id] = coster.cost(q, config)
    report.whatif_calls = engine.accounting.whatif_calls - calls0
    cost_after = sum(q.weight * after[q.id] for q in queries)
    adjusted = SearchResult(
        result.strategy, config, result.cost_before, cost_after,
        {q.id: (before[q.id], after[q.id]) for q in queries},
        result.whatif_calls + report.whatif_calls, list(result.trace), result.budget_exhausted,
        {**result.extra, "verified": True, "vetoed": [v["index"] for v in report.vetoed]})
    return adjusted, report


class QprGuardedCoster:
    """Per-round verification: a costing whose plan QPR flags costs as the baseline.

    Wrapping the search's coster makes every step discard predicted-regressing
    benefits, at one extra baseline plan per query.
    """

    def __init__(self, engine: EngineAdapter, qpr: QprModel, exec_seed: int = 0):
        _require_plans(engine)
        self.engine = engine
        self.qpr = qpr
        self.exec_seed = exec_seed
        self._measured: dict[str, float | None] = {}

    def cost(self, q: LogicalQuery, config: Configuration) -> float:
        new = self.engine.optimize(q, config)
        old = self.engine.optimize(q, Configuration())
        if new.plan.signature == old.plan.signature:
            return new.estimated_cost
        if q.id not in self._measured:
            self._measured.update(_measured_baseline(self.engine, [q], self.exec_seed))
        p = qpr_predict(self.qpr, old, new, query_log2_rows(q, self.engine.schema),
                        self._measured[q.id])
        return old.estimated_cost if p.regression else new.estimated_cost
