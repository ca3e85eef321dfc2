"""Workload selection: indexing-aware compression and arrival forecasting."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientData
from .ir import LogicalQuery, Role, Schema, Workload
from .sql import extract_indexable_columns

ROLE_WEIGHTS = {
    Role.FILTER_EQ: 1.0,
    Role.JOIN: 0.8,
    Role.FILTER_RANGE: 0.6,
    Role.GROUP_BY: 0.4,
    Role.ORDER_BY: 0.4,
}
#: stands in for (1 - selectivity) on group-by / order-by columns
ORDERING_BENEFIT = 0.5

QueryFeatureVector = dict  # "table.column.role" -> nonnegative weight


def _table_selectivity(q: LogicalQuery, table: str) -> float:
    s = 1.0
    for p in q.predicates:
        if p.column.table == table:
            s *= p.selectivity
    return s


def estimate_improvement(q: LogicalQuery, schema: Schema, baseline_cost: float) -> float:
    """Optimizer-free estimate of how much indexes could save on ``q``.

    Each referenced table gets a share of the baseline proportional to its
    row count, and can save at most the fraction its predicates filter out.
    """
    if baseline_cost is None:
        raise ValueError(f"query {q.id}: baseline cost required")
    rows = {t: schema[t].rows for t in q.tables}
    total_rows = sum(rows.values())
    return sum(baseline_cost * (rows[t] / total_rows) * (1.0 - _table_selectivity(q, t))
               for t in q.tables)


def featurize(q: LogicalQuery, schema: Schema,
              role_weights: Mapping[Role, float] = ROLE_WEIGHTS) -> QueryFeatureVector:
    out: dict[str, float] = {}
    col_sel: dict[tuple[str, str], float] = {}
    for p in q.predicates:
        key = (p.column.table, p.column.column)
        col_sel[key] = col_sel.get(key, 1.0) * p.selectivity
    for c in extract_indexable_columns(q):
        stats = schema[c.table]
        if c.role in (Role.FILTER_EQ, Role.FILTER_RANGE):
            benefit = 1.0 - col_sel.get((c.table, c.column), 1.0)
        elif c.role is Role.JOIN:
            benefit = 1.0 - 1.0 / stats.column(c.column).distinct_count
        else:
            benefit = ORDERING_BENEFIT
        w = role_weights[c.role] * math.log2(stats.rows) * benefit
        if w > 0:
            out[f"{c.table}.{c.column}.{c.role.value}"] = w
    return out


def similarity(a: QueryFeatureVector, b: QueryFeatureVector) -> float:
    """Cosine similarity of two sparse feature vectors; 0 when either is empty."""
    if not a or not b:
        return 0.0
    if len(b) < len(a):
        a, b = b, a
    dot = sum(w * b[k] for k, w in a.items() if k in b)
    na = math.sqrt(sum(w * w for w in a.values()))
    nb = math.sqrt(sum(w * w for w in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    return min(1.0, max(0.0, dot / (na * nb)))


@dataclass
class CompressionResult:
    queries: list[LogicalQuery]
    selected_ids: list[str]
    scores: list[float]
    assignment: dict[str, str] = field(default_factory=dict)
    noop: bool = False

    def workload(self, baseline: Mapping[str, float] | None = None) -> Workload:
        if baseline is not None:
            baseline = {q.id: baseline[q.id] for q in self.queries}
        return Workload(self.queries, baseline)


def _baselines(W: Workload, baseline: Mapping[str, float] | None) -> dict[str, float]:
    costs = baseline if baseline is not None else W.baseline_cost
    if costs is None:
        raise ValueError("compression needs per-query baseline costs")
    return {q.id: float(costs[q.id]) for q in W}


def _feature_matrix(vectors: Sequence[QueryFeatureVector]) -> np.ndarray:
    keys = sorted({k for v in vectors for k in v})
    col = {k: i for i, k in enumerate(keys)}
    X = np.zeros((len(vectors), len(keys)))
    for i, v in enumerate(vectors):
        for k, w in v.items():
            X[i, col[k]] = w
    norms = np.linalg.norm(X, axis=1)
    nz = norms > 0
    X[nz] /= norms[nz, None]
    return X


def _tie_floor(top: float, rel: float = 1e-9) -> float:
    # scores this close to the maximum are ties, whatever the summation order
    return top - rel * max(abs(top), 1.0)


def compress_workload(W: Workload, schema: Schema, k: int,
                      baseline: Mapping[str, float] | None = None) -> CompressionResult:
    """Pick ``k`` representative queries in decreasing order of residual score.

    ``score(q) = imp(q) + sum_{q' != q} sim(q, q') * imp(q')`` is evaluated
    through one aggregate vector per round, so a round is
    O(|W| * features). Selecting ``q`` damps every other query's residual
    improvement by ``1 - sim(q, q')``. Unselected queries hand their weight to
    their most similar selected query, so total weight is preserved.
    """
    if k < 1:
        raise ValueError("target size must be >= 1")
    queries = sorted(W, key=lambda q: q.id)
    if k >= len(queries):
        return CompressionResult(list(W), [q.id for q in W], [], {}, noop=True)
    base = _baselines(W, baseline)
    imp = np.array([estimate_improvement(q, schema, base[q.id]) for q in queries])
    X = _feature_matrix([featurize(q, schema) for q in queries])
    self_sim = np.einsum("ij,ij->i", X, X)

    residual = imp.copy()
    pool = np.ones(len(queries), dtype=bool)
    selected: list[int] = []
    scores: list[float] = []
    for _ in range(k):
        agg = X.T @ np.where(pool, residual, 0.0)
        score = residual + X @ agg - residual * self_sim
        score = np.where(pool, score, -np.inf)
        best = int(np.argmax(score >= _tie_floor(float(score.max()))))  # smallest id among ties
        selected.append(best)
        scores.append(float(score[best]))
        pool[best] = False
        sims = np.clip(X @ X[best], 0.0, 1.0)
        residual = np.where(pool, residual * np.clip(1.0 - sims, 0.0, 1.0), residual)

    return _finish(queries, selected, scores, X @ X[selected].T)


def _finish(queries, selected, scores, sim_to_selected) -> CompressionResult:
    order = sorted(range(len(selected)), key=lambda j: queries[selected[j]].id)
    weights = {queries[i].id: queries[i].weight for i in selected}
    assignment = {}
    chosen = set(selected)
    # columns in id order, so argmax's first maximum is the smallest id
    nearest = np.argmax(np.asarray(sim_to_selected)[:, order], axis=1)
    for i, q in enumerate(queries):
        if i in chosen:
            continue
        target = queries[selected[order[nearest[i]]]].id
        assignment[q.id] = target
        weights[target] += q.weight
    out = [queries[i].with_weight(weights[queries[i].id]) for i in selected]
    return CompressionResult(out, [q.id for q in out], scores, assignment)


def compress_workload_pairwise(W: Workload, schema: Schema, k: int,
                               baseline: Mapping[str, float] | None = None) -> CompressionResult:
    """Quadratic reference version of :func:`compress_workload` (for checking)."""
    queries = sorted(W, key=lambda q: q.id)
    if k >= len(queries):
        return CompressionResult(list(W), [q.id for q in W], [], {}, noop=True)
    base = _baselines(W, baseline)
    vecs = [featurize(q, schema) for q in queries]
    n = len(queries)
    sim = [[similarity(vecs[i], vecs[j]) for j in range(n)] for i in range(n)]
    residual = [estimate_improvement(q, schema, base[q.id]) for q in queries]
    pool = set(range(n))
    selected, scores = [], []
    for _ in range(k):
        score = {i: residual[i] + sum(sim[i][j] * residual[j] for j in pool if j != i)
                 for i in pool}
        floor = _tie_floor(max(score.values()))
        best = min(i for i in pool if score[i] >= floor)
        best_score = score[best]
        selected.append(best)
        scores.append(best_score)
        pool.discard(best)
        for j in pool:
            residual[j] *= min(1.0, max(0.0, 1.0 - sim[best][j]))
    sim_sel = np.array([[sim[i][j] for j in selected] for i in range(n)])
    return _finish(queries, selected, scores, sim_sel)


# ---------------------------------------------------------------------------
# forecasting


@dataclass(frozen=True)
class ArrivalSeries:
    template_id: str
    bucket_starts: tuple[float, ...]
    counts: tuple[float, ...]
    bucket_width: float = 3600.0

    def __post_init__(self):
        if len(self.bucket_starts) != len(self.counts):
            raise ValueError("bucket starts and counts differ in length")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be nonnegative")
        for a, b in zip(self.bucket_starts, self.bucket_starts[1:]):
            if not math.isclose(b - a, self.bucket_width):
                raise ValueError("buckets must be contiguous and sorted")


def bucket_arrivals(arrivals: Iterable[tuple[str, float]],
                    bucket_width: float = 3600.0) -> dict[str, ArrivalSeries]:
    """Group (template_id, timestamp) pairs into aligned, zero-filled series."""
    arrivals = list(arrivals)
    if not arrivals:
        return {}
    t0 = math.floor(min(ts for _, ts in arrivals) / bucket_width) * bucket_width
    n = int(math.floor((max(ts for _, ts in arrivals) - t0) / bucket_width)) + 1
    counts: dict[str, list[float]] = defaultdict(lambda: [0.0] * n)
    for tid, ts in arrivals:
        counts[tid][int((ts - t0) // bucket_width)] += 1
    starts = tuple(t0 + i * bucket_width for i in range(n))
    return {tid: ArrivalSeries(tid, starts, tuple(c), bucket_width)
            for tid, c in sorted(counts.items())}


def forecast_arrivals(series: ArrivalSeries | Sequence[float], horizon: int,
                      order: int = 4, min_history: int = 8) -> list[float]:
    """Iterated least-squares AR(order) forecast, clamped at zero."""
    y = np.asarray(series.counts if isinstance(series, ArrivalSeries) else series, dtype=float)
    if len(y) < max(min_history, order + 1):
        raise InsufficientData(f"need at least {max(min_history, order + 1)} buckets, got {len(y)}")
    rows = np.array([np.r_[1.0, y[t - order:t][::-1]] for t in range(order, len(y))])
    coef, *_ = np.linalg.lstsq(rows, y[order:], rcond=None)
    hist = list(y)
    out = []
    for _ in range(horizon):
        x = np.r_[1.0, np.array(hist[-order:][::-1])]
        pred = max(0.0, float(x @ coef))
        out.append(pred)
        hist.append(pred)
    return out


def mape(actual: Sequence[float], predicted: Sequence[float]) -> float:
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    mask = a != 0
    return float(np.mean(np.abs(a[mask] - p[mask]) / np.abs(a[mask])))
