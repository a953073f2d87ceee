"""Closed-loop reachability for the network controllers."""
from .bounds import e1, e2, hor_reach_bounds, vert_reach_bounds
from .cells import CellGrid, DynBounds, cells_intersecting
from .delay import reach_step_delayed, run_reachability_delayed
from .engine import ReachModel, ReachResult, Successors, Verdict, delta_sweep, reach_step, run_reachability

__all__ = [
    "CellGrid", "DynBounds", "ReachModel", "ReachResult", "Successors", "Verdict", "cells_intersecting",
    "delta_sweep", "e1", "e2", "hor_reach_bounds", "reach_step", "reach_step_delayed", "run_reachability",
    "run_reachability_delayed", "vert_reach_bounds",
]
