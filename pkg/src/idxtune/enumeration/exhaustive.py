"""Exact oracle over all small configurations."""

from __future__ import annotations

from itertools import combinations
from math import comb

from ..errors import GuardError
from ..ir import Configuration, TuningConstraints
from .base import Coster, SearchContext, SearchResult
from .greedy import _as_indexes

MAX_SUBSETS = 10 ** 6


def count_subsets(n: int, k: int) -> int:
    return sum(comb(n, j) for j in range(0, min(n, k) + 1))


def exhaustive_search(W, candidates, constraints: TuningConstraints, coster: Coster,
                      guard: int = MAX_SUBSETS) -> SearchResult:
    """Minimum-cost configuration among all subsets of size <= K meeting storage.

    Subsets are visited by size, then lexicographically by id, and only a
    strictly cheaper one replaces the incumbent, so ties keep the smaller
    configuration, then the lexicographically first id sequence.
    """
    pool = _as_indexes(candidates)
    k = constraints.max_indexes
    n_subsets = count_subsets(len(pool), k)
    if n_subsets > guard:
        raise GuardError(f"{n_subsets} subsets exceed the guard of {guard}")
    ctx = SearchContext(W, coster, constraints)
    base = ctx.baseline()
    best_cfg, best_pq, best_total = Configuration(), dict(base), ctx.total(base)
    visited = 1
    for size in range(1, min(k, len(pool)) + 1):
        for combo in combinations(pool, size):
            visited += 1
            cfg = Configuration(combo)
            if not ctx.fits(cfg):
                continue
            pq = dict(base)
            touched = {q.id: q for ix in combo for q in ctx.affected(ix)}
            for q in touched.values():
                pq[q.id] = ctx.cost(q, cfg)
            total = ctx.total(pq)
            if total < best_total:
                best_cfg, best_pq, best_total = cfg, pq, total
    trace = [(ctx.calls, ctx.improvement(best_total))]
    return ctx.result("exhaustive", best_cfg, best_pq, trace, subsets=visited)
