"""Stochastic games with costly, interactive information acquisition."""

__version__ = "0.1.0"
