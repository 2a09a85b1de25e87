"""Restarted truncated unrolled hypergradients for variational image restoration."""

__version__ = "0.1.0"
