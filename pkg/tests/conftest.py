import pytest

from idxtune.ir import ColumnStats, Schema, TableStats


def make_table(name, rows, cols, width=8, distinct=None):
    return TableStats(name, rows, {c: ColumnStats(c, width, min(rows, (distinct or {}).get(c, rows)))
                                   for c in cols})


@pytest.fixture(scope="session")
def schema():
    """One million-row table plus a joinable pair."""
    return Schema([
        make_table("t", 1_000_000, ["a", "b", "c", "d", "x"], distinct={"b": 1000, "c": 50}),
        make_table("t1", 100_000, ["k", "a", "e"], distinct={"k": 10_000}),
        make_table("t2", 10_000, ["k", "d", "f"], distinct={"k": 10_000, "d": 100}),
    ])
