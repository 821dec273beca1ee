"""Continual-learning library: moment pooling, per-problem adapters and
heads over frozen embeddings, a TIL/DIL sequence harness, and the
accuracy-matrix metric suite."""

__version__ = "0.1.0"
