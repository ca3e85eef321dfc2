"""Query performance regression (QPR) prediction from execution telemetry.

The model regresses the log of the measured cost ratio between a new and an
old plan of the same query; a pair is a predicted regression when that ratio
exceeds ``log(1 + delta)``. Keeping it a regressor means ``delta`` can move
without retraining.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from ..candidates import generate_syntactic_indexes
from ..engine import EngineConfig, VirtualEngine, WhatIfResult
from ..errors import CapabilityError, InsufficientData
from ..ir import Configuration, LogicalQuery, PlanDescriptor, Schema
from ..synth import GeneratedDatabase
from .learners import FittedModel, RegressionLearner
from .serialize import envelope, open_envelope

FEATURES = (
    "access_changed", "old_seeks", "new_seeks", "covering_delta", "noncovering_delta",
    "sort_elim_delta", "join_method_changed", "new_nested_loop", "log_est_ratio",
    "log2_rows", "lookup_share_old", "lookup_share_new", "lookup_share_delta",
    "prefix_len_delta", "old_log_mismatch",
)

DELTA = 0.10
_NORMAL = NormalDist()


def _plan_stats(plan: PlanDescriptor) -> tuple[int, int, int, int]:
    seeks = [a for a in plan.accesses if a.kind == "index_seek"]
    covering = sum(a.covering for a in seeks)
    return len(seeks), covering, len(seeks) - covering, sum(a.matched_prefix_len for a in seeks)


def qpr_features(old: WhatIfResult, new: WhatIfResult, log2_rows: float,
                 measured_old: float | None = None) -> list[float]:
    """Plan-pair deltas; ``measured_old`` is the old plan's observed cost, if known."""
    if old.plan is None or new.plan is None:
        raise CapabilityError("QPR features need plan descriptors")
    o_seeks, o_cov, o_non, o_pref = _plan_stats(old.plan)
    n_seeks, n_cov, n_non, n_pref = _plan_stats(new.plan)
    changed = sum(1 for a in new.plan.accesses if old.plan.access(a.table) != a)
    o_share = old.lookup_cost / old.estimated_cost
    n_share = new.lookup_cost / new.estimated_cost
    return [
        float(changed), float(o_seeks), float(n_seeks), float(n_cov - o_cov),
        float(n_non - o_non), float(new.plan.sort_eliminated) - float(old.plan.sort_eliminated),
        float(new.plan.join_method != old.plan.join_method),
        float(new.plan.join_method == "index_nested_loop"),
        math.log(new.estimated_cost / old.estimated_cost), log2_rows,
        o_share, n_share, n_share - o_share, float(n_pref - o_pref),
        math.log(measured_old / old.estimated_cost) if measured_old else 0.0,
    ]


def query_log2_rows(q: LogicalQuery, schema: Schema) -> float:
    return math.log2(sum(schema[t].rows for t in q.tables))


@dataclass(frozen=True)
class ExecutionRecord:
    template_id: str
    query_id: str
    old: WhatIfResult
    new: WhatIfResult
    measured_old: float
    measured_new: float
    log2_rows: float

    @property
    def log_ratio(self) -> float:
        return math.log(self.measured_new / self.measured_old)

    def features(self) -> list[float]:
        return qpr_features(self.old, self.new, self.log2_rows, self.measured_old)


def simulate_execution_log(db: GeneratedDatabase, sigma: float = 0.25, pairs_per_query: int = 6,
                           seed: int = 0, exec_seed: int = 0) -> list[ExecutionRecord]:
    """Telemetry for one generated database: (old, new) plan pairs with measured costs.

    Half the pairs compare a random candidate configuration with the empty
    one (the tuning case); the rest compare two random configurations, so
    estimated ratios spread in both directions.
    """
    engine = VirtualEngine(db.schema, EngineConfig(noise_sigma=sigma))
    rng = random.Random(seed)
    out = []
    for q in db.workload:
        cands = [p.index for p in generate_syntactic_indexes(q)]
        if not cands:
            continue
        rows = query_log2_rows(q, db.schema)

        def random_config():
            return Configuration(rng.sample(cands, rng.randint(1, min(3, len(cands)))))

        for k in range(pairs_per_query):
            old_c = Configuration() if k % 2 == 0 else random_config()
            new_c = random_config()
            old, new = engine.optimize(q, old_c), engine.optimize(q, new_c)
            out.append(ExecutionRecord(q.template_id, q.id, old, new,
                                       engine.execute(q, old_c, exec_seed),
                                       engine.execute(q, new_c, exec_seed), rows))
    return out


@dataclass
class QprModel:
    model: FittedModel
    delta: float = DELTA
    #: residual std on the validation split, for margin -> probability
    scale: float = 1.0
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def threshold(self) -> float:
        return math.log1p(self.delta)

    def predict_log_ratio(self, old: WhatIfResult, new: WhatIfResult, log2_rows: float,
                          measured_old: float | None = None) -> float:
        return self.model.predict(qpr_features(old, new, log2_rows, measured_old))

    def to_dict(self) -> dict:
        return envelope("qpr", FEATURES, {"model": self.model.to_dict(), "delta": self.delta,
                                          "scale": self.scale, "metrics": self.metrics})

    @classmethod
    def from_dict(cls, doc: dict) -> "QprModel":
        p = open_envelope(doc, "qpr", FEATURES)
        return cls(FittedModel.from_dict(p["model"]), p["delta"], p["scale"], p["metrics"])


@dataclass(frozen=True)
class QprPrediction:
    log_ratio: float
    probability: float
    regression: bool


def qpr_predict(model: QprModel, old: WhatIfResult, new: WhatIfResult, log2_rows: float,
                measured_old: float | None = None) -> QprPrediction:
    pred = model.predict_log_ratio(old, new, log2_rows, measured_old)
    margin = pred - model.threshold
    return QprPrediction(pred, _NORMAL.cdf(margin / model.scale), margin > 0)


def classification_metrics(pred_log: Sequence[float], true_log: Sequence[float],
                           delta: float) -> dict:
    """Recall on true regressions and false-alarm rate among non-regressions."""
    thr = math.log1p(delta)
    pred = np.asarray(pred_log) > thr
    true = np.asarray(true_log) > thr
    n_reg, n_ok = int(true.sum()), int((~true).sum())
    return {
        "accuracy": float((pred == true).mean()) if len(true) else 1.0,
        "recall": float((pred & true).sum() / n_reg) if n_reg else 1.0,
        "false_alarm_rate": float((pred & ~true).sum() / n_ok) if n_ok else 0.0,
        "regressions": n_reg, "non_regressions": n_ok,
    }


def train_qpr(log: Sequence[ExecutionRecord], delta: float = DELTA,
              learner: RegressionLearner | None = None, validation_fraction: float = 0.25,
              seed: int = 0) -> QprModel:
    if len(log) < 50:
        raise InsufficientData(f"QPR training needs at least 50 log rows, got {len(log)}")
    if len({r.query_id.split('#')[0] for r in log}) < 2:
        raise InsufficientData("QPR log covers fewer than two queries")
    X = np.asarray([r.features() for r in log])
    y = np.asarray([r.log_ratio for r in log])
    idx = list(range(len(log)))
    random.Random(seed).shuffle(idx)
    n_val = max(1, int(len(idx) * validation_fraction))
    val, train = np.asarray(sorted(idx[:n_val])), np.asarray(sorted(idx[n_val:]))
    learner = learner or RegressionLearner("boosted_trees", n_rounds=80, seed=seed)
    fitted = learner.fit(X[train], y[train])
    val_pred = fitted.predict_many(X[val])
    scale = float(np.std(y[val] - val_pred)) or 1e-6
    metrics = classification_metrics(val_pred, y[val], delta)
    metrics["validation_rows"] = int(len(val))
    final = learner.fit(X, y)
    return QprModel(final, delta, scale, metrics)


def build_execution_log(dbs: Sequence[GeneratedDatabase], sigma: float = 0.25,
                        seed: int = 0) -> list[ExecutionRecord]:
    if len(dbs) < 3:
        raise InsufficientData("QPR training needs logs from at least 3 generated workloads")
    log: list[ExecutionRecord] = []
    for k, db in enumerate(dbs):
        part = simulate_execution_log(db, sigma, seed=seed + k, exec_seed=seed)
        log += [ExecutionRecord(r.template_id, f"{r.query_id}#db{k}", r.old, r.new,
                                r.measured_old, r.measured_new, r.log2_rows) for r in part]
    return log
