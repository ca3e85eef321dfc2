"""Budget-aware Monte Carlo tree search over configurations.

Each tree node is a configuration; an edge adds one index from a ranked,
capped action list. Selection uses UCB1, expansion takes the highest-ranked
untried action, and a rollout completes the configuration with seeded random
additions. The reward is the rollout's improvement fraction, so it lies in
[0, 1] and one UCB constant works across workloads.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from ..ir import Configuration, IndexDef, TuningConstraints
from .base import Coster, SearchBudget, SearchContext, SearchResult, run_guarded
from .greedy import _as_indexes, _own_candidates


@dataclass
class MctsNode:
    config: Configuration
    untried: list[IndexDef]
    visits: int = 0
    total_reward: float = 0.0
    children: dict[str, "MctsNode"] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return self.total_reward / self.visits if self.visits else 0.0


def rank_actions(ctx: SearchContext, candidates, pool: list[IndexDef], branch_cap: int,
                 passes: int = 3) -> list[tuple[IndexDef, float]]:
    """Rank candidates by the per-query improvement they deliver.

    Each pass costs every query once with all of its own not-yet-credited
    candidates available and credits the indexes its plan uses with that
    query's weighted improvement; later passes surface second choices.
    Costs |W| calls per pass.
    """
    own = _own_candidates(ctx, pool, candidates)
    base = ctx.baseline()
    credit: dict[str, float] = {}
    by_id = {ix.id: ix for ix in pool}
    for _ in range(passes):
        found = False
        for q in ctx.queries:
            avail = [ix for ix in own[q.id] if ix.id not in credit]
            if not avail:
                continue
            ctx.check_clock()
            res = ctx.engine.optimize(q, Configuration(avail))
            gain = q.weight * (base[q.id] - res.estimated_cost)
            # without plan descriptors, spread the credit over every available index
            used = res.plan.index_ids() if res.plan is not None else tuple(ix.id for ix in avail)
            if gain <= 0 or not used:
                continue
            for ix_id in used:
                credit[ix_id] = credit.get(ix_id, 0.0) + gain / len(used)
                found = True
        if not found or len(credit) >= branch_cap:
            break
    ranked = sorted(credit.items(), key=lambda kv: (-kv[1], kv[0]))[:branch_cap]
    return [(by_id[k], v) for k, v in ranked]


def mcts_search(W, candidates, constraints: TuningConstraints, coster: Coster,
                budget: SearchBudget, seed: int = 0, ucb_c: float = math.sqrt(2.0),
                branch_cap: int = 32, warm_start: bool = True, max_iterations: int = 20000,
                max_stale: int = 500) -> SearchResult:
    """Anytime MCTS; returns the best configuration evaluated within the budget.

    With ``warm_start`` the top-K ranked actions are evaluated once before the
    tree loop, so the result is never worse than that ranking alone. The
    loop ends when the budget runs out, or after ``max_stale`` consecutive
    iterations that cost no new call (the reachable space is exhausted).
    """
    if budget.max_whatif_calls is None and budget.wall_clock_seconds is None:
        raise ValueError("MCTS needs a what-if call budget or a time limit")
    ctx = SearchContext(W, coster, constraints, budget)
    pool = _as_indexes(candidates)
    rng = random.Random(seed)
    k = constraints.max_indexes
    rewards: dict[str, tuple[float, dict[str, float]]] = {}
    best = {"config": Configuration(), "per_query": None, "reward": 0.0}
    trace: list[tuple[int, float]] = []
    stats = {"iterations": 0, "actions": 0, "nodes": 1}

    def evaluate(config: Configuration) -> float:
        hit = rewards.get(config.signature)
        if hit is not None:
            return hit[0]
        base = ctx.baseline()
        pq = dict(base)
        touched = {q.id: q for ix in config for q in ctx.affected(ix)}
        for q in touched.values():
            pq[q.id] = ctx.cost(q, config)
        reward = ctx.improvement(ctx.total(pq))
        rewards[config.signature] = (reward, pq)
        if reward > best["reward"] or (reward == best["reward"] and best["per_query"] is None):
            best.update(config=config, per_query=pq, reward=reward)
        trace.append((ctx.calls, best["reward"]))
        return reward

    def body():
        best["per_query"] = dict(ctx.baseline())
        trace.append((ctx.calls, 0.0))
        ranked = rank_actions(ctx, candidates, pool, branch_cap)
        actions = [ix for ix, _ in ranked]
        stats["actions"] = len(actions)
        if not actions:
            return
        if warm_start:
            start = Configuration()
            for ix in actions:
                if len(start) < k and ctx.fits(start, ix):
                    start = start.add(ix)
            evaluate(start)
        rank = {ix.id: i for i, ix in enumerate(actions)}
        root = MctsNode(Configuration(), [ix for ix in actions if ctx.fits(Configuration(), ix)])
        stale = 0
        while True:
            stats["iterations"] += 1
            node, path = root, [root]
            # selection
            while not node.untried and node.children and len(node.config) < k:
                log_n = math.log(node.visits)
                node = max(node.children.values(), key=lambda ch: (
                    ch.mean + ucb_c * math.sqrt(log_n / ch.visits), -len(ch.config),
                    ch.config.signature))
                path.append(node)
            # expansion
            if node.untried and len(node.config) < k:
                ix = node.untried.pop(0)
                cfg = node.config.add(ix)
                # only later-ranked actions below a child: each subset has one path
                later = actions[rank[ix.id] + 1:]
                child = MctsNode(cfg, [a for a in later if ctx.fits(cfg, a)])
                node.children[ix.id] = child
                stats["nodes"] += 1
                node = child
                path.append(node)
            # rollout
            cfg = node.config
            free = [a for a in actions if a not in cfg]
            rng.shuffle(free)
            for a in free:
                if len(cfg) >= k:
                    break
                if ctx.fits(cfg, a):
                    cfg = cfg.add(a)
            calls_before = ctx.calls
            fresh = cfg.signature not in rewards
            reward = evaluate(cfg)
            for n in path:
                n.visits += 1
                n.total_reward += reward
            stale = 0 if fresh and ctx.calls > calls_before else stale + 1
            if stale >= max_stale or stats["iterations"] >= max_iterations:
                break

    run_guarded(ctx, body)
    pq = best["per_query"] if best["per_query"] is not None else dict(ctx.baseline())
    config = prune_unused(ctx, best["config"])
    return ctx.result("mcts", config, pq, trace, seed=seed, pruned=len(best["config"]) - len(config),
                      **stats)


def prune_unused(ctx: SearchContext, config: Configuration) -> Configuration:
    """Drop indexes no cached plan under ``config`` uses; costs are unchanged.

    Rollouts pad configurations with random indexes. An index that none of
    its affected queries' optimal plans uses can go without changing any
    cost. Only cached plans are consulted, so this makes no what-if call; an
    index is kept whenever a plan is unknown.
    """
    peek = getattr(ctx.engine, "peek", None)
    if peek is None:
        return config
    keep = []
    for ix in config:
        used = False
        for q in ctx.affected(ix):
            hit = peek(q, config)
            if hit is None or hit.plan is None or ix.id in hit.plan.index_ids():
                used = True
                break
        if used:
            keep.append(ix)
    return Configuration(keep)
