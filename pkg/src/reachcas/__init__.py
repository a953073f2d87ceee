"""Collision-avoidance tables, ReLU network compression, and closed-loop reachability."""

__version__ = "0.1.0"
