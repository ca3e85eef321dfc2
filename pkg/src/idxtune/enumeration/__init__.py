"""Configuration search strategies, selectable by name."""

from .base import (
    UNBOUNDED,
    Coster,
    SearchBudget,
    SearchContext,
    SearchResult,
    WhatIfCoster,
    workload_cost,
)
from .exhaustive import MAX_SUBSETS, count_subsets, exhaustive_search
from .greedy import autoadmin_search, greedy_search, twophase_search
from .mcts import MctsNode, mcts_search
from .verify import QprGuardedCoster, VerificationReport, verify_no_regression

STRATEGIES = {
    "greedy": greedy_search,
    "autoadmin": autoadmin_search,
    "two-phase": twophase_search,
    "mcts": mcts_search,
    "exhaustive": exhaustive_search,
}


def run_strategy(name: str, W, candidates, constraints, coster: Coster,
                 budget: SearchBudget = UNBOUNDED, **options) -> SearchResult:
    """Dispatch to a strategy by name; ``options`` override its defaults."""
    try:
        fn = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown enumerator {name!r}; choose from {sorted(STRATEGIES)}") from None
    if name == "exhaustive":
        return fn(W, candidates, constraints, coster, **options)
    return fn(W, candidates, constraints, coster, budget, **options)


__all__ = [
    "MAX_SUBSETS", "STRATEGIES", "UNBOUNDED", "Coster", "MctsNode", "QprGuardedCoster",
    "SearchBudget", "SearchContext", "SearchResult", "VerificationReport", "WhatIfCoster",
    "autoadmin_search", "count_subsets", "exhaustive_search", "greedy_search", "mcts_search",
    "run_strategy", "twophase_search", "verify_no_regression", "workload_cost",
]
