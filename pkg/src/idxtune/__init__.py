"""Index tuning toolkit: IR, what-if engine, candidates, learned models and search."""

__version__ = "0.1.0"
