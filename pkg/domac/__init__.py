"""Opponent-model-aided distributional actor-critic for predator-prey games."""

__version__ = "0.1.0"
