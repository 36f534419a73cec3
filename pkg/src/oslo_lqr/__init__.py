"""Adaptive LQR control via optimistic semidefinite relaxations."""

__version__ = "0.1.0"
