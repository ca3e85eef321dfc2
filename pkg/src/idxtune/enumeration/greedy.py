"""Greedy configuration search and the two per-query-seeded variants built on it."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import Iterable, Sequence

from ..candidates import CandidateSet
from ..ir import Configuration, IndexDef, LogicalQuery, TuningConstraints, Workload
from .base import Coster, SearchBudget, SearchContext, SearchResult, UNBOUNDED, run_guarded


def _as_indexes(candidates: CandidateSet | Iterable[IndexDef]) -> list[IndexDef]:
    out = {ix.id: ix for ix in candidates}
    return [out[k] for k in sorted(out)]


def _greedy_rounds(ctx: SearchContext, queries: Sequence[LogicalQuery], pool: Sequence[IndexDef],
                   limit: int, state: dict, n_jobs: int = 1) -> None:
    """Grow ``state['config']`` greedily over ``queries``; updates ``state`` in place.

    ``state`` holds the incumbent configuration, its per-query costs and the
    trace, so a caller that catches budget exhaustion keeps the last completed
    round. Only queries an index can affect are re-costed.
    """
    qset = {q.id for q in queries}
    eps = ctx.constraints.min_improvement_epsilon
    remaining = [ix for ix in pool if ix not in state["config"]]
    while len(state["config"]) < limit and remaining:
        config: Configuration = state["config"]
        cur: dict[str, float] = state["per_query"]
        total = sum(q.weight * cur[q.id] for q in queries)
        feasible = [ix for ix in remaining if ctx.fits(config, ix)]
        if not feasible:
            break

        def evaluate(ix: IndexDef):
            trial = config.add(ix)
            delta = 0.0
            costs = {}
            for q in ctx.affected(ix):
                if q.id not in qset:
                    continue
                c = ctx.cost(q, trial)
                costs[q.id] = c
                delta += q.weight * (c - cur[q.id])
            return delta, costs

        if n_jobs > 1 and ctx.budget.unbounded:
            with ThreadPoolExecutor(max_workers=n_jobs) as ex:
                outcomes = list(ex.map(evaluate, feasible))
        else:
            outcomes = [evaluate(ix) for ix in feasible]
        # argmin over the complete round; ties go to the smallest id (pool is sorted)
        best = min(range(len(feasible)), key=lambda i: (outcomes[i][0], i))
        delta, costs = outcomes[best]
        if total <= 0 or -delta / total < eps:
            break
        ix = feasible[best]
        state["config"] = config.add(ix)
        state["per_query"] = {**cur, **costs}
        remaining = [r for r in remaining if r.id != ix.id]
        state["rounds"] = state.get("rounds", 0) + 1
        if "trace" in state:
            state["trace"].append((ctx.calls, ctx.improvement(ctx.total(state["per_query"]))))


def greedy_search(W: Workload | Sequence[LogicalQuery], candidates, constraints: TuningConstraints,
                  coster: Coster, budget: SearchBudget = UNBOUNDED, n_jobs: int = 1) -> SearchResult:
    """Classic greedy: add the index with the lowest resulting workload cost each round.

    Stops at ``K`` indexes, when the best relative improvement over the
    current cost falls below epsilon, or when the budget runs out (keeping the
    last completed round).
    """
    ctx = SearchContext(W, coster, constraints, budget)
    pool = _as_indexes(candidates)
    state: dict = {"config": Configuration(), "trace": []}

    def body():
        state["per_query"] = dict(ctx.baseline())
        state["trace"].append((ctx.calls, 0.0))
        _greedy_rounds(ctx, ctx.queries, pool, constraints.max_indexes, state, n_jobs)

    run_guarded(ctx, body)
    state.setdefault("per_query", dict(ctx.baseline()))
    return ctx.result("greedy", state["config"], state["per_query"], state["trace"],
                      rounds=state.get("rounds", 0))


def _best_subset(ctx: SearchContext, q: LogicalQuery, own: Sequence[IndexDef], m: int,
                 base: float) -> tuple[Configuration, float]:
    best, best_cost = Configuration(), base
    for size in range(1, min(m, len(own)) + 1):
        for combo in combinations(own, size):
            c = Configuration(combo)
            if not ctx.fits(c):
                continue
            cost = ctx.cost(q, c)
            if cost < best_cost:
                best, best_cost = c, cost
    return best, best_cost


def autoadmin_search(W, candidates, constraints: TuningConstraints, coster: Coster,
                     budget: SearchBudget = UNBOUNDED, m: int = 1, n_jobs: int = 1) -> SearchResult:
    """Per-query best m-subsets of own candidates, then greedy over their union."""
    ctx = SearchContext(W, coster, constraints, budget)
    pool = _as_indexes(candidates)
    by_query = _own_candidates(ctx, pool, candidates)
    state: dict = {"config": Configuration(), "trace": []}
    winners: dict[str, IndexDef] = {}

    def body():
        base = ctx.baseline()
        state["per_query"] = dict(base)
        state["trace"].append((ctx.calls, 0.0))
        for q in ctx.queries:
            best, _ = _best_subset(ctx, q, by_query[q.id], m, base[q.id])
            for ix in best:
                winners.setdefault(ix.id, ix)
        state["phase"] = "B"
        _greedy_rounds(ctx, ctx.queries, _as_indexes(winners.values()), constraints.max_indexes,
                       state, n_jobs)

    run_guarded(ctx, body)
    state.setdefault("per_query", dict(ctx.baseline()))
    return ctx.result("autoadmin", state["config"], state["per_query"], state["trace"],
                      winners=sorted(winners), phase=state.get("phase", "A"))


def _own_candidates(ctx: SearchContext, pool: Sequence[IndexDef], candidates) -> dict[str, list[IndexDef]]:
    """Each query's own candidates: interested lists when known, else affected-by."""
    out: dict[str, list[IndexDef]] = {q.id: [] for q in ctx.queries}
    if isinstance(candidates, CandidateSet):
        for ix in pool:
            for qid in candidates.interested(ix.id):
                if qid in out:
                    out[qid].append(ix)
    else:
        for ix in pool:
            for q in ctx.affected(ix):
                out[q.id].append(ix)
    return out


def twophase_search(W, candidates, constraints: TuningConstraints, coster: Coster,
                    budget: SearchBudget = UNBOUNDED, p: int = 3, n_jobs: int = 1) -> SearchResult:
    """Phase 1: greedy per query (up to ``p`` indexes); phase 2: greedy over the union.

    If the budget runs out in phase 1, the union of the completed queries'
    winners (truncated to the constraints) is returned, costed by the upper
    bound each query already has: its own phase-1 cost, or its baseline.
    """
    ctx = SearchContext(W, coster, constraints, budget)
    pool = _as_indexes(candidates)
    by_query = _own_candidates(ctx, pool, candidates)
    state: dict = {"config": Configuration(), "trace": []}
    winners: list[IndexDef] = []
    bounds: dict[str, tuple[Configuration, float]] = {}

    def body():
        base = ctx.baseline()
        state["per_query"] = dict(base)
        state["trace"].append((ctx.calls, 0.0))
        for q in ctx.queries:
            local = {"config": Configuration(), "per_query": {q.id: base[q.id]}}
            _greedy_rounds(ctx, [q], by_query[q.id], min(p, constraints.max_indexes), local)
            bounds[q.id] = (local["config"], local["per_query"][q.id])
            for ix in local["config"]:
                if ix not in winners:
                    winners.append(ix)
        state["phase"] = 2
        _greedy_rounds(ctx, ctx.queries, _as_indexes(winners), constraints.max_indexes,
                       state, n_jobs)

    run_guarded(ctx, body)
    if not ctx.exhausted or state.get("phase") == 2:
        state.setdefault("per_query", dict(ctx.baseline()))
        return ctx.result("two-phase", state["config"], state["per_query"], state["trace"],
                          winners=sorted(ix.id for ix in winners), phase=state.get("phase", 1))
    # exhausted during phase 1: fall back to the completed queries' winners
    config = Configuration()
    for ix in winners:
        if ctx.fits(config, ix):
            config = config.add(ix)
    per_query = dict(ctx.baseline())
    for qid, (own, bound) in bounds.items():
        # monotone costs: keeping all of a query's own winners keeps its bound
        if all(ix in config for ix in own):
            per_query[qid] = min(per_query[qid], bound)
    trace = state["trace"] + [(ctx.calls, ctx.improvement(ctx.total(per_query)))]
    return ctx.result("two-phase", config, per_query, trace,
                      winners=sorted(ix.id for ix in winners), phase=1, cost_is_upper_bound=True)
