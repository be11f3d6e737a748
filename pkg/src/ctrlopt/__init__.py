"""Controllable multi-objective sequence optimisation with group-relative RL."""

__version__ = "0.1.0"
