"""Hermitian Levy matrix ensembles and their free Levy spectral limits."""

__version__ = "0.1.0"
