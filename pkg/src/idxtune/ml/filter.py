"""Workload-agnostic spurious-index filter.

A regressor predicts the relative improvement ``ri`` an index brings to a
query from structure and statistics alone. Pairs predicted below a threshold
are pruned before enumeration, so they never cost a what-if call.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..candidates import CandidatePair, CandidateSet, generate_syntactic_indexes, union_candidates
from ..engine import (QueryInfo, VirtualEngine, WhatIfResult, match_prefix, provides_order,
                      sort_cost)
from ..errors import InsufficientData
from ..ir import Configuration, IndexDef, LogicalQuery, Role, Schema
from ..sql import extract_indexable_columns
from ..synth import GeneratedDatabase
from .learners import FittedModel, RegressionLearner
from .serialize import envelope, open_envelope

FEATURES = (
    "lead_selectivity", "prefix_selectivity", "covering", "log2_rows", "baseline_seek",
    "provides_order", "key_width", "lead_eq", "lead_range", "lead_join", "lead_sort",
    "touches",
    # beyond the base list: where the baseline already is, and the other table
    "log10_prefix_selectivity", "log2_baseline_over_rows", "log10_table_selectivity",
    "sort_required", "baseline_covering", "other_log2_rows", "other_log10_selectivity",
    # stats-only proxies for the three ways an index can pay off
    "log2_seek_over_baseline", "log2_probe_over_baseline", "sort_share",
)

SPURIOUS_THRESHOLD = 0.05


def _lead_role(q: LogicalQuery, index: IndexDef) -> Role | None:
    for c in extract_indexable_columns(q):
        if c.table == index.table and c.column == index.key_columns[0]:
            return c.role
    return None


def featurize_filter_pair(q: LogicalQuery, index: IndexDef, baseline: WhatIfResult,
                          schema: Schema, qi: QueryInfo | None = None) -> list[float]:
    """Fixed-order feature vector for one (query, index) pair; see ``FEATURES``."""
    qi = qi or QueryInfo(q, schema)
    info = qi.tables[index.table]
    lead = index.key_columns[0]
    lead_sel = info.eq_sel.get(lead, 1.0) * info.range_sel.get(lead, 1.0)
    eq_len, _, s = match_prefix(index.key_columns, info)
    covering = info.referenced <= index.columns
    role = _lead_role(q, index)
    access = baseline.plan.access(index.table) if baseline.plan is not None else None
    seeks = access is not None and access.kind == "index_seek"
    others = [t for t in q.tables if t != index.table]
    other = qi.tables[others[0]] if others else None
    table_sel = info.n_out / info.rows
    base_cost = baseline.estimated_cost
    lookups = 1.0 if covering else 3.0
    seek = info.log_rows + s * info.rows * lookups
    probe_ratio = 0.0
    if other is not None and qi.join is not None and role is Role.JOIN:
        ta, _, da, tb, _, db = qi.join
        distinct = da if index.table == ta else db
        _, _, ps = match_prefix(index.key_columns, info, lead_sel=1.0 / distinct)
        probe = other.n_out * (info.log_rows + ps * info.rows * lookups)
        probe_ratio = math.log2(max(probe, 1e-9) / base_cost)
    n_sort = info.n_out
    if other is not None and qi.join is not None:
        n_sort = info.n_out * other.n_out / max(qi.join[2], qi.join[5], 1)
    sort_share = sort_cost(n_sort) / base_cost if qi.sort_cols else 0.0
    return [
        lead_sel,
        s,
        float(covering),
        info.log_rows,
        float(seeks),
        float(qi.sort_table == index.table and provides_order(index.key_columns, eq_len, qi)),
        float(len(index.key_columns)),
        float(role is Role.FILTER_EQ),
        float(role is Role.FILTER_RANGE),
        float(role is Role.JOIN),
        float(role in (Role.GROUP_BY, Role.ORDER_BY)),
        1.0 / len(q.tables),
        math.log10(s),
        math.log2(baseline.estimated_cost / info.rows),
        math.log10(max(table_sel, 1e-300)),
        float(bool(qi.sort_cols)),
        float(seeks and access.covering),
        other.log_rows if other else 0.0,
        math.log10(max(other.n_out / other.rows, 1e-300)) if other else 0.0,
        math.log2(seek / base_cost),
        probe_ratio,
        min(sort_share, 1.0),
    ]


@dataclass
class FilterModel:
    model: FittedModel
    tau_pred: float
    tau_label: float = SPURIOUS_THRESHOLD
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.tau_pred < 1.0:
            raise ValueError("tau_pred must be in (0, 1)")

    def predict(self, rows) -> np.ndarray:
        return self.model.predict_many(rows)

    def to_dict(self) -> dict:
        return envelope("filter", FEATURES, {
            "model": self.model.to_dict(), "tau_pred": self.tau_pred,
            "tau_label": self.tau_label, "metrics": self.metrics})

    @classmethod
    def from_dict(cls, doc: dict) -> "FilterModel":
        p = open_envelope(doc, "filter", FEATURES)
        return cls(FittedModel.from_dict(p["model"]), p["tau_pred"], p["tau_label"], p["metrics"])


@dataclass
class LabeledPairs:
    rows: list[list[float]]
    labels: list[float]
    groups: list[str]  # "<db>/<query id>", keeps a query's pairs on one side of a split


def relative_improvement(before: float, after: float) -> float:
    return (before - after) / before if before > 0 else 0.0


def label_pairs(db: GeneratedDatabase, tag: str = "", existing_fraction: float = 0.3,
                seed: int = 0, engine: VirtualEngine | None = None) -> LabeledPairs:
    """Oracle-labelled pairs for one generated database.

    Most queries are labelled against an empty current configuration; a
    fraction start from one of their own candidates, so the learner also sees
    indexes that duplicate or compete with one that already exists.
    """
    engine = engine or VirtualEngine(db.schema)
    rng = random.Random(seed)
    out = LabeledPairs([], [], [])
    for q in db.workload:
        cands = [p.index for p in generate_syntactic_indexes(q)]
        if not cands:
            continue
        c0 = Configuration()
        if rng.random() < existing_fraction:
            c0 = Configuration([rng.choice(cands)])
        base = engine.optimize(q, c0)
        qi = QueryInfo(q, db.schema)
        for ix in cands:
            after = engine.optimize(q, c0.add(ix)).estimated_cost
            out.rows.append(featurize_filter_pair(q, ix, base, db.schema, qi))
            out.labels.append(relative_improvement(base.estimated_cost, after))
            out.groups.append(f"{tag}/{q.id}")
    return out


def choose_threshold(pred: Sequence[float], truth: Sequence[float], tau_label: float,
                     max_fn_rate: float) -> float:
    """Largest threshold whose false-negative rate stays within ``max_fn_rate``.

    A false negative is a pruned pair (prediction below the threshold) whose
    true improvement is at least ``tau_label``; the rate is over useful pairs.
    """
    pred = np.asarray(pred)
    useful = np.asarray(truth) >= tau_label
    n_useful = int(useful.sum())
    allowed = math.floor(max_fn_rate * n_useful + 1e-9)
    lo, hi = 1e-6, 1.0 - 1e-6
    # candidate cut points: between consecutive distinct predictions
    cuts = np.unique(np.clip(pred, lo, hi))
    best = lo
    useful_preds = np.sort(pred[useful])
    for t in cuts:
        fn = int(np.searchsorted(useful_preds, t, side="left"))  # useful with pred < t
        if fn <= allowed:
            best = max(best, float(t))
    return float(min(max(best, lo), hi))


def train_filter(training_dbs: Sequence[GeneratedDatabase], tau_label: float = SPURIOUS_THRESHOLD,
                 learner: RegressionLearner | None = None, max_fn_rate: float = 0.03,
                 validation_fraction: float = 0.25, seed: int = 0) -> FilterModel:
    if len(training_dbs) < 3:
        raise InsufficientData("filter training needs at least 3 generated databases")
    data = LabeledPairs([], [], [])
    for k, db in enumerate(training_dbs):
        part = label_pairs(db, tag=f"db{k}", seed=seed + k)
        data.rows += part.rows
        data.labels += part.labels
        data.groups += part.groups
    if len(data.rows) < 20:
        raise InsufficientData(f"only {len(data.rows)} labelled pairs")
    groups = sorted(set(data.groups))
    random.Random(seed).shuffle(groups)
    val_groups = set(groups[: max(1, int(len(groups) * validation_fraction))])
    is_val = np.array([g in val_groups for g in data.groups])
    X = np.asarray(data.rows)
    y = np.asarray(data.labels)
    learner = learner or RegressionLearner("boosted_trees", n_rounds=80, seed=seed)
    fitted = learner.fit(X[~is_val], y[~is_val])
    val_pred = fitted.predict_many(X[is_val])
    tau = choose_threshold(val_pred, y[is_val], tau_label, max_fn_rate)
    metrics = filter_metrics(val_pred, y[is_val], tau, tau_label)
    metrics["train_pairs"] = int((~is_val).sum())
    metrics["validation_pairs"] = int(is_val.sum())
    # refit on everything so no labelled pair is wasted; tau stays as calibrated
    final = learner.fit(X, y)
    return FilterModel(final, tau, tau_label, metrics)


def filter_metrics(pred, truth, tau_pred: float, tau_label: float) -> dict:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    pruned = pred < tau_pred
    spurious = truth < tau_label
    n_sp, n_useful = int(spurious.sum()), int((~spurious).sum())
    return {
        "fn_rate": float((pruned & ~spurious).sum() / n_useful) if n_useful else 0.0,
        "spurious_pruned_fraction": float((pruned & spurious).sum() / n_sp) if n_sp else 1.0,
        "spurious_pairs": n_sp,
        "useful_pairs": n_useful,
    }


def filter_candidates(model: FilterModel | None, pairs: Sequence[CandidatePair],
                      queries: Mapping[str, LogicalQuery], baselines: Mapping[str, WhatIfResult],
                      schema: Schema) -> list[CandidatePair]:
    """Pairs whose predicted improvement reaches ``tau_pred``; ``model=None`` passes through.

    Only the baseline plans (one what-if call per query, made by the caller)
    are consulted; no optimizer call happens here.
    """
    if model is None or not pairs:
        return list(pairs)
    infos: dict[str, QueryInfo] = {}
    rows = []
    for p in pairs:
        q = queries[p.query_id]
        qi = infos.get(q.id) or infos.setdefault(q.id, QueryInfo(q, schema))
        rows.append(featurize_filter_pair(q, p.index, baselines[q.id], schema, qi))
    pred = model.predict(rows)
    return [p for p, r in zip(pairs, pred) if r >= model.tau_pred]


def filter_candidate_set(model: FilterModel | None, candidates: CandidateSet,
                         queries: Mapping[str, LogicalQuery], baselines: Mapping[str, WhatIfResult],
                         schema: Schema) -> CandidateSet:
    """Drop an index only when every interested query prunes it."""
    kept = filter_candidates(model, candidates.to_pairs(), queries, baselines, schema)
    return union_candidates(kept)
