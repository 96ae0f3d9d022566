"""Conditioned branching random walk engine."""
