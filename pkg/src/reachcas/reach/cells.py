"""Rectilinear cell grids over the controller's continuous inputs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..mdp import ContractError


@dataclass
class DynBounds:
    """Next-step over-approximation: a box plus optional linear constraints.

    Each constraint is ``(coef, lo, hi)`` meaning lo <= coef . x <= hi.
    Bounds on periodic dimensions may extend past the period; they are
    wrapped when intersected with a grid.
    """

    lo: np.ndarray
    hi: np.ndarray
    coupled: list[tuple[np.ndarray, float, float]] = field(default_factory=list)

    def contains(self, x: np.ndarray, periodic: Sequence[bool] | None = None) -> np.ndarray:
        """Membership of points (rows of ``x``) in box and constraints."""
        x = np.atleast_2d(x)
        ok = np.ones(x.shape[0], dtype=bool)
        for d in range(x.shape[1]):
            v = x[:, d]
            if periodic is not None and periodic[d]:
                v = self.lo[d] + np.mod(v - self.lo[d], 2 * np.pi)
            ok &= (v >= self.lo[d]) & (v <= self.hi[d])
        for coef, lo, hi in self.coupled:
            s = x @ coef
            ok &= (s >= lo) & (s <= hi)
        return ok


class CellGrid:
    """Cells are the boxes between consecutive cut points in every dimension."""

    def __init__(self, cuts: Sequence[Sequence[float]], names: Sequence[str], periodic: Sequence[bool] | None = None):
        self.cuts = [np.asarray(c, dtype=np.float64) for c in cuts]
        self.names = list(names)
        self.periodic = list(periodic) if periodic is not None else [False] * len(self.cuts)
        for i, c in enumerate(self.cuts):
            if c.ndim != 1 or c.size < 2 or not np.all(np.diff(c) > 0):
                raise ContractError(f"cut points of {self.names[i]} must be strictly increasing (>= 2)")
            if self.periodic[i] and not np.isclose(c[-1] - c[0], 2 * np.pi):
                raise ContractError(f"periodic dimension {self.names[i]} must span 2*pi")
        if not (len(self.names) == len(self.cuts) == len(self.periodic)):
            raise ContractError("names/periodic must match the number of dimensions")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.size - 1 for c in self.cuts)

    @property
    def ndim(self) -> int:
        return len(self.cuts)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def boxes(self) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) arrays of shape (size, ndim) in flat cell order."""
        lo = np.meshgrid(*[c[:-1] for c in self.cuts], indexing="ij")
        hi = np.meshgrid(*[c[1:] for c in self.cuts], indexing="ij")
        return (np.stack([m.ravel() for m in lo], axis=1), np.stack([m.ravel() for m in hi], axis=1))

    def cell_box(self, flat: int) -> tuple[np.ndarray, np.ndarray]:
        idx = np.unravel_index(int(flat), self.shape)
        return (np.array([c[i] for c, i in zip(self.cuts, idx)]),
                np.array([c[i + 1] for c, i in zip(self.cuts, idx)]))

    def locate(self, x: Sequence[float]) -> int | None:
        """A cell containing point ``x`` (lowest index on shared faces), or None outside."""
        idx = []
        for d, (c, v) in enumerate(zip(self.cuts, x)):
            if self.periodic[d]:
                v = c[0] + np.mod(v - c[0], 2 * np.pi)
            if v < c[0] or v > c[-1]:
                return None
            idx.append(min(int(np.searchsorted(c, v, side="right")) - 1, c.size - 2))
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def _segments(self, d: int, lo: float, hi: float) -> np.ndarray:
        c = self.cuts[d]
        if self.periodic[d]:
            if hi - lo >= 2 * np.pi:
                return np.arange(c.size - 1)
            shift = c[0] + np.mod(lo - c[0], 2 * np.pi) - lo
            lo, hi = lo + shift, hi + shift
            parts = [self._plain_segments(c, lo, min(hi, c[-1]))]
            if hi > c[-1]:
                parts.append(self._plain_segments(c, c[0], hi - 2 * np.pi))
            return np.unique(np.concatenate(parts))
        return self._plain_segments(c, lo, hi)

    @staticmethod
    def _plain_segments(c: np.ndarray, lo: float, hi: float) -> np.ndarray:
        if hi < c[0] or lo > c[-1] or hi < lo:
            return np.zeros(0, dtype=np.int64)
        if lo == hi:
            # A degenerate extent touches every closed segment containing it.
            first = max(int(np.searchsorted(c, lo, side="left")) - 1, 0)
            last = min(int(np.searchsorted(c, lo, side="right")) - 1, c.size - 2)
            return np.arange(first, last + 1)
        # Positive-width extent: segments overlapping with positive length.
        first = max(int(np.searchsorted(c, lo, side="right")) - 1, 0)
        last = min(int(np.searchsorted(c, hi, side="left")) - 1, c.size - 2)
        return np.arange(first, last + 1)


def cells_intersecting(b: DynBounds, grid: CellGrid) -> np.ndarray:
    """Flat ids of cells overlapping ``b`` with positive measure, minus cells a constraint rules out."""
    segs = [grid._segments(d, float(b.lo[d]), float(b.hi[d])) for d in range(grid.ndim)]
    if any(s.size == 0 for s in segs):
        return np.zeros(0, dtype=np.int64)
    mesh = np.meshgrid(*segs, indexing="ij")
    multi = [m.ravel() for m in mesh]
    flat = np.ravel_multi_index(multi, grid.shape)
    if b.coupled:
        keep = np.ones(flat.size, dtype=bool)
        lo = np.stack([grid.cuts[d][multi[d]] for d in range(grid.ndim)], axis=1)
        hi = np.stack([grid.cuts[d][multi[d] + 1] for d in range(grid.ndim)], axis=1)
        for coef, c_lo, c_hi in b.coupled:
            cp, cn = np.maximum(coef, 0), np.minimum(coef, 0)
            smin = lo @ cp + hi @ cn
            smax = hi @ cp + lo @ cn
            keep &= (smax >= c_lo) & (smin <= c_hi)
        flat = flat[keep]
    return np.sort(flat).astype(np.int64)
