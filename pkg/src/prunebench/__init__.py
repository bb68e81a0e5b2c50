"""Importance-based dataset pruning for simulated edge-learning fleets."""
__version__ = "0.1.0"
