"""Reward constants shared by the vertical and horizontal table models."""
from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class Costs:
    # All penalties are <= 0 so that rewards are pure costs.
    nmac: float = -1.0
    alert: float = -5e-3
    reversal: float = -8e-3
    strengthen: float = -5e-4
    weaken: float = -3e-4
    crossing: float = -1e-2
    coc_conflict: float = -1e-2

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v > 0:
                raise ValueError(f"cost {k} must be <= 0, got {v}")

    def as_dict(self) -> dict:
        return asdict(self)
