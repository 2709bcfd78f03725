"""Minimum-action-distance embeddings learned from state-only trajectories."""

__version__ = "0.1.0"
