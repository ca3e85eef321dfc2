"""Per-template learned cost models: a cache that generalizes across bindings.

Queries from one template differ only in their literal bindings, so a model
trained on a few (binding, configuration) costings can stand in for the
optimizer on the rest. Training is budgeted: every actual cost is one what-if
call and a model never spends more than ``call_cap`` of them.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..engine import EngineAdapter, QueryInfo, match_prefix, provides_order, sort_cost
from ..errors import InsufficientData
from ..ir import Configuration, IndexDef, LogicalQuery, Schema
from .learners import FittedModel, RegressionLearner, q_error
from .serialize import envelope, open_envelope

PROBE_SIZE = 5
CALL_CAP = 50
Q_TARGET = 1.5
DEFAULT_LEARNER = RegressionLearner("boosted_trees", max_depth=4, min_samples_leaf=2,
                                    n_rounds=100, learning_rate=0.15)

_LOOKUPS = 3.0  # 1 + lookup penalty, for non-covering seeks
_PROBE_CAP = 1e3  # probe proxy for tables no join-led index serves


def _slot_names(q: LogicalQuery) -> list[str]:
    return [f"sel:{p.column.qualified}" for p in q.predicates]


def feature_names(q: LogicalQuery) -> list[str]:
    names = _slot_names(q)
    for t in sorted(q.tables):
        names += [f"{t}:{n}" for n in (
            "best_access", "best_covering", "best_prefix_sel", "covering_sel",
            "order_flag", "order_access", "join_led", "probe_access", "access_proxy", "probe_proxy")]
    return names


def config_features(q: LogicalQuery, config: Configuration, schema: Schema,
                    qi: QueryInfo | None = None) -> list[float]:
    """Binding selectivities plus, per table, how well ``config`` serves it.

    Access terms are log10 fractions of a full scan estimated from the best
    matched-prefix selectivity, with the lookup factor for non-covering keys.
    The access proxy adds the sort an access still leaves to do, so an
    ordered full scan and a selective seek plus sort are comparable; the
    probe proxy is the whole nested-loop probe cost (outer rows times one
    probe) as a fraction of a scan, capped at _PROBE_CAP.
    """
    qi = qi or QueryInfo(q, schema)
    out = [math.log10(p.selectivity) for p in q.predicates]
    for t in sorted(q.tables):
        info = qi.tables[t]
        best = (1.0, 0.0, 1.0)  # (access fraction, covering, prefix sel)
        cov_sel = 1.0
        order_flag, order_access = 0.0, 1.0
        join_led, probe = 0.0, 1.0
        join_col = distinct = None
        outer_rows = 0.0
        probe_total = _PROBE_CAP
        sort_frac = 0.0
        if qi.sort_table == t:
            n_sort = info.n_out
            if qi.join is not None:
                other = qi.tables[qi.join[3] if t == qi.join[0] else qi.join[0]]
                n_sort = info.n_out * other.n_out / max(qi.join[2], qi.join[5], 1)
            sort_frac = sort_cost(n_sort) / info.rows
        proxy = 1.0 + sort_frac
        if qi.join is not None:
            ta, ca, da, tb, cb, db = qi.join
            join_col, distinct = (ca, da) if t == ta else (cb, db)
            outer_rows = qi.tables[tb if t == ta else ta].n_out
        for ix in config.on_table(t):
            eq_len, _, s = match_prefix(ix.key_columns, info)
            covering = info.referenced <= ix.columns
            frac = s * (1.0 if covering else _LOOKUPS)
            if frac < best[0]:
                best = (frac, float(covering), s)
            if covering:
                cov_sel = min(cov_sel, s)
            ordered = qi.sort_table == t and provides_order(ix.key_columns, eq_len, qi)
            if ordered:
                order_flag = 1.0
                order_access = min(order_access, frac)
            proxy = min(proxy, frac + (0.0 if ordered else sort_frac))
            if join_col is not None and ix.key_columns[0] == join_col:
                join_led = 1.0
                _, _, ps = match_prefix(ix.key_columns, info, lead_sel=1.0 / distinct)
                probe = min(probe, ps * (1.0 if covering else _LOOKUPS))
                one = info.log_rows + ps * info.rows * (1.0 if covering else _LOOKUPS)
                probe_total = min(probe_total, outer_rows * one / info.rows)
        out += [math.log10(min(best[0], 1.0)), best[1], math.log10(best[2]), math.log10(cov_sel),
                order_flag, math.log10(min(order_access, 3.0)), join_led, math.log10(probe),
                math.log10(proxy), math.log10(max(probe_total, 1e-12))]
    return out


@dataclass
class TemplateCostModel:
    template_id: str
    model: FittedModel | None
    feature_names: list[str]
    training_call_count: int
    quality: float
    #: exact costs seen while training, keyed by (query id, config signature)
    memo: dict[tuple[str, str], float] = field(default_factory=dict)
    call_cap: int = CALL_CAP
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.training_call_count > self.call_cap:
            raise ValueError("training exceeded the per-model call cap")
        if self.quality < 1.0:
            raise ValueError("Q-error is at least 1")

    @property
    def degenerate(self) -> bool:
        return self.model is None

    def lookup(self, q: LogicalQuery, config: Configuration) -> float | None:
        return self.memo.get((q.id, config.restrict(q.tables).signature))

    def predict(self, q: LogicalQuery, config: Configuration, schema: Schema,
                qi: QueryInfo | None = None) -> float | None:
        hit = self.lookup(q, config)
        if hit is not None:
            return hit
        if self.model is None:
            return None
        return math.exp(self.model.predict(config_features(q, config, schema, qi)))

    def to_dict(self) -> dict:
        return envelope("cost_model", self.feature_names, {
            "template_id": self.template_id,
            "model": self.model.to_dict() if self.model else None,
            "training_call_count": self.training_call_count, "quality": self.quality,
            "call_cap": self.call_cap, "history": self.history,
            "memo": [[qid, sig, cost] for (qid, sig), cost in sorted(self.memo.items())]})

    @classmethod
    def from_dict(cls, doc: dict, names: Sequence[str] | None = None) -> "TemplateCostModel":
        p = open_envelope(doc, "cost_model", names)
        model = FittedModel.from_dict(p["model"]) if p["model"] else None
        memo = {(qid, sig): float(c) for qid, sig, c in p["memo"]}
        return cls(p["template_id"], model, list(doc["feature_names"]), p["training_call_count"],
                   p["quality"], memo, p["call_cap"], p["history"])


def _standardize(F: np.ndarray) -> np.ndarray:
    sd = F.std(axis=0)
    sd[sd == 0] = 1.0
    return (F - F.mean(axis=0)) / sd


def farthest_point_order(F: np.ndarray, k: int, start: int = 0) -> list[int]:
    """Greedy max-min traversal; ties go to the lowest index."""
    if len(F) == 0:
        return []
    chosen = [start]
    d = np.linalg.norm(F - F[start], axis=1)
    while len(chosen) < min(k, len(F)):
        nxt = int(np.argmax(d))
        if d[nxt] <= 0:
            break
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(F - F[nxt], axis=1))
    return chosen


def train_template_cost_model(
    bindings: Sequence[LogicalQuery],
    configs: Sequence[Configuration],
    engine: EngineAdapter,
    call_cap: int = CALL_CAP,
    q_target: float = Q_TARGET,
    seed_size: int = 15,
    probe_size: int = PROBE_SIZE,
    learner: RegressionLearner = DEFAULT_LEARNER,
    seed: int = 0,
) -> TemplateCostModel:
    """Iteratively train a cost model for one template within ``call_cap`` calls.

    The seed training set is a farthest-point traversal of the instance pool
    (bindings x configurations) in standardized feature space. Each round fits
    the learner, costs a probe of the instances farthest from the training
    set, and moves the worst-predicted probe instance into training; the
    remaining probe costs are kept as exact memo entries. Training stops once
    the median Q-error over the last two rounds' probes reaches ``q_target``
    or the cap is hit.
    """
    if not bindings:
        raise InsufficientData("no bindings for template")
    template = bindings[0].template_id
    if any(b.template_id != template for b in bindings):
        raise ValueError("bindings come from more than one template")
    names = feature_names(bindings[0])
    schema = engine.schema
    calls = 0
    memo: dict[tuple[str, str], float] = {}

    def actual(q: LogicalQuery, c: Configuration) -> float:
        nonlocal calls
        key = (q.id, c.restrict(q.tables).signature)
        if key not in memo:
            before = engine.accounting.whatif_calls
            memo[key] = engine.optimize(q, c).estimated_cost
            calls += engine.accounting.whatif_calls - before
        return memo[key]

    distinct = {b.id: b for b in bindings}
    if len(distinct) < 2:
        # degenerate: one binding, memoize per configuration on demand
        return TemplateCostModel(template, None, names, 0, 1.0, {}, call_cap)

    infos = {b.id: QueryInfo(b, schema) for b in bindings}
    pool = [(b, c) for b in bindings for c in configs]
    F = np.asarray([config_features(b, c, schema, infos[b.id]) for b, c in pool])
    Z = _standardize(F)
    rng = random.Random(seed)
    train: list[int] = []
    for i in farthest_point_order(Z, min(seed_size, call_cap)):
        if calls >= call_cap:
            break
        actual(*pool[i])
        train.append(i)
    seen = set(train)
    model = None
    quality = math.inf
    history: list[float] = []
    recent: list[list[float]] = []
    def target(i: int) -> float:
        return math.log(actual(*pool[i]))

    while True:
        model = learner.fit(F[train], np.array([target(i) for i in train]))
        remaining = [i for i in range(len(pool)) if i not in seen]
        if not remaining or calls >= call_cap:
            break
        room = call_cap - calls
        dist = np.min(np.linalg.norm(Z[remaining][:, None, :] - Z[train][None, :, :], axis=2), axis=1)
        order = sorted(range(len(remaining)), key=lambda j: (-dist[j], rng.random()))
        probe = [remaining[j] for j in order[: min(probe_size, room)]]
        errs = []
        for i in probe:
            pred = math.exp(model.predict(F[i]))
            errs.append(q_error(pred, actual(*pool[i])))
            seen.add(i)
        # judge on the last two rounds' probes so one lucky round cannot stop training
        recent = (recent[-1:] if recent else []) + [errs]
        quality = float(np.median([e for r in recent for e in r]))
        history.append(quality)
        train.append(probe[int(np.argmax(errs))])
        if quality <= q_target and len(recent) == 2:
            model = learner.fit(F[train], np.array([target(i) for i in train]))
            break
    if not history:
        quality = 1.0 if len(train) == len(pool) else math.inf
    quality = max(1.0, quality)
    return TemplateCostModel(template, model, names, calls, quality, memo, call_cap, history)


def training_configs(indexes: Sequence[IndexDef], max_configs: int = 60,
                     seed: int = 0) -> list[Configuration]:
    """Empty, singleton and random small configurations over a template's candidates."""
    rng = random.Random(seed)
    configs = [Configuration()] + [Configuration([ix]) for ix in indexes]
    seen = {c.signature for c in configs}
    tries = 0
    while len(configs) < max_configs and len(indexes) >= 2 and tries < 20 * max_configs:
        tries += 1
        pick = rng.sample(list(indexes), rng.randint(2, min(3, len(indexes))))
        c = Configuration(pick)
        if c.signature not in seen:
            seen.add(c.signature)
            configs.append(c)
    return configs


# ---------------------------------------------------------------------------


class ModelCoster:
    """Cost source for enumeration: learned model, engine cache, else a what-if call.

    A model answers only if it exists for the query's template and its
    training quality is within ``q_target``. Predictions never exceed the
    query's baseline cost, mirroring the engine's cost monotonicity.
    """

    def __init__(self, engine: EngineAdapter, models: Mapping[str, TemplateCostModel] | None = None,
                 q_target: float = Q_TARGET, baselines: Mapping[str, float] | None = None):
        self.engine = engine
        self.models = dict(models or {})
        self.q_target = q_target
        self.baselines = dict(baselines or {})
        self.served = {"model": 0, "whatif": 0, "cache": 0}
        # greedy may cost candidates on a thread pool; counters must stay exact
        self._lock = threading.Lock()
        self._infos: dict[str, QueryInfo] = {}
        self._pred: dict[tuple[str, str], float] = {}

    def _usable(self, q: LogicalQuery) -> TemplateCostModel | None:
        m = self.models.get(q.template_id)
        if m is not None and m.quality <= self.q_target:
            return m
        return None

    def cost_or_predict(self, q: LogicalQuery, config: Configuration) -> tuple[float, str]:
        model = self._usable(q)
        if model is not None:
            key = (q.id, config.restrict(q.tables).signature)
            cost = self._pred.get(key)
            if cost is None:
                qi = self._infos.get(q.id)
                if qi is None:
                    qi = self._infos[q.id] = QueryInfo(q, self.engine.schema)
                cost = model.predict(q, config, self.engine.schema, qi)
                if cost is not None and q.id in self.baselines:
                    cost = min(cost, self.baselines[q.id])
                if cost is not None:
                    self._pred[key] = cost
            if cost is not None:
                self._count("model")
                return cost, "model"
        res = self.engine.optimize(q, config)
        cost = res.estimated_cost
        if not res.from_cache:
            self._count("whatif")
            if model is not None and model.degenerate:
                model.memo[(q.id, config.restrict(q.tables).signature)] = cost
            return cost, "whatif"
        self._count("cache")
        return cost, "cache"

    def _count(self, source: str) -> None:
        with self._lock:
            self.served[source] += 1

    def cost(self, q: LogicalQuery, config: Configuration) -> float:
        return self.cost_or_predict(q, config)[0]


def cost_or_predict(q: LogicalQuery, config: Configuration, coster: ModelCoster) -> tuple[float, str]:
    return coster.cost_or_predict(q, config)


def train_workload_cost_models(W: Iterable[LogicalQuery], candidates, engine: EngineAdapter,
                               min_bindings: int = 4, call_cap: int = CALL_CAP,
                               q_target: float = Q_TARGET, max_configs: int = 60,
                               seed: int = 0,
                               into: dict[str, TemplateCostModel] | None = None
                               ) -> dict[str, TemplateCostModel]:
    """One model per template with at least ``min_bindings`` queries.

    A template's configurations are drawn from the candidates its queries
    are interested in (or, for a plain index list, those on its tables).
    Smaller templates are left to the optimizer: a model costs up to
    ``call_cap`` calls and only pays off when the search would cost the
    template more than that. Finished models are added to ``into`` as they
    complete, so a caller that stops training early keeps them.
    """
    groups: dict[str, list[LogicalQuery]] = {}
    for q in W:
        groups.setdefault(q.template_id, []).append(q)
    interested = getattr(candidates, "for_query", None)
    pool = sorted({ix.id: ix for ix in candidates}.values(), key=lambda ix: ix.id)
    models = into if into is not None else {}
    for k, tid in enumerate(sorted(groups)):
        bindings = groups[tid]
        if len(bindings) < min_bindings or tid in models:
            continue
        if interested is not None:
            own = {ix.id: ix for q in bindings for ix in interested(q.id)}
            indexes = [own[i] for i in sorted(own)]
        else:
            tables = set(bindings[0].tables)
            indexes = [ix for ix in pool if ix.table in tables]
        configs = training_configs(indexes, max_configs, seed=seed + k)
        models[tid] = train_template_cost_model(bindings, configs, engine, call_cap, q_target,
                                                seed=seed + k)
    return models
