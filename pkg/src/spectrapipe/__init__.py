"""Physically-constrained spectral recovery toolkit."""
