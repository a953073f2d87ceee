"""Small hand-checkable reachability models."""
from __future__ import annotations

import numpy as np

from .cells import CellGrid
from .engine import ReachModel, Successors


def _line_grid(n: int) -> CellGrid:
    return CellGrid([np.arange(n + 1, dtype=float)], ["x"])


def drift_toy(n_cells: int = 3, tau_max: int = 4, nmac_cell: int | None = None,
              initial=(0,)) -> ReachModel:
    """One advisory (COC); each cell may stay or drift one cell right.

    The rightmost cell drifts out of the domain. With ``nmac_cell`` set, that
    cell is the collision region.
    """
    offs = np.zeros(n_cells + 1, dtype=np.int64)
    nxt = []
    for c in range(n_cells):
        targets = [c, c + 1] if c + 1 < n_cells else [c]
        nxt += targets
        offs[c + 1] = len(nxt)
    succ = Successors.from_lists([(offs, np.array(nxt, dtype=np.int64))])
    cache = np.ones((1, tau_max + 1, n_cells, 1), dtype=bool)
    nmac = np.zeros(n_cells, dtype=bool)
    if nmac_cell is not None:
        nmac[nmac_cell] = True
    sep = np.abs(np.arange(n_cells) - (nmac_cell if nmac_cell is not None else n_cells)).astype(float)
    init = np.zeros(n_cells, dtype=bool)
    init[list(initial)] = True
    return ReachModel(_line_grid(n_cells), succ, cache, nmac, sep, initial=init, names=("COC",))


COC, UP, DOWN = 0, 1, 2


def pilot_delay_toy(tau_max: int = 8, n_cells: int = 9) -> ReachModel:
    """Nine cells on a line with the collision cell in the middle.

    The controller always points away from the middle (DOWN below it, UP
    above it, either at the middle). COC holds position. A pilot who lags
    the controller can keep oscillating around the middle if it keeps
    reversing; capping reversals forces it out.
    """
    mid = n_cells // 2
    rows = []
    for step in (0, 1, -1):
        offs = np.zeros(n_cells + 1, dtype=np.int64)
        nxt = []
        for c in range(n_cells):
            if 0 <= c + step < n_cells:
                nxt.append(c + step)
            offs[c + 1] = len(nxt)
        rows.append((offs, np.array(nxt, dtype=np.int64)))
    adv = np.zeros((n_cells, 3), dtype=bool)
    cells = np.arange(n_cells)
    adv[cells < mid, DOWN] = True
    adv[cells > mid, UP] = True
    adv[mid, [UP, DOWN]] = True
    cache = np.broadcast_to(adv, (3, tau_max + 1, n_cells, 3)).copy()
    nmac = cells == mid
    return ReachModel(_line_grid(n_cells), Successors.from_lists(rows), cache, nmac,
                      np.abs(cells - mid).astype(float), sense=np.array([0, 1, -1]),
                      names=("COC", "UP", "DOWN"))
