"""Feed-forward ReLU networks: evaluation and the text file format.

File layout (after any number of leading ``//`` comment lines)::

    num_layers
    size_0,size_1,...,size_L          input, hidden..., output
    input mins
    input maxes
    means (inputs then output)
    ranges (inputs then output)
    per layer: one line per weight row, then one line per bias

Floats are written with ``repr`` so that a load/save round trip is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .mdp import ContractError


class NnetParseError(ValueError):
    pass


@dataclass
class Network:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_min: np.ndarray
    input_max: np.ndarray
    input_mean: np.ndarray
    input_range: np.ndarray
    output_mean: float = 0.0
    output_range: float = 1.0
    header: str = ""
    input_names: list[str] = field(default_factory=list)
    output_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        for k in ("input_min", "input_max", "input_mean", "input_range"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=np.float64).reshape(-1))
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("need one bias vector per weight matrix")
        prev = self.weights[0].shape[1]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[1] != prev or b.shape != (w.shape[0],):
                raise ContractError(f"layer {i} dimensions do not chain")
            prev = w.shape[0]
        n = self.num_inputs
        for k in ("input_min", "input_max", "input_mean", "input_range"):
            if getattr(self, k).shape != (n,):
                raise ContractError(f"{k} must have {n} entries")
        if np.any(self.input_range <= 0) or not self.output_range > 0:
            raise ContractError("normalization ranges must be positive")
        if np.any(self.input_min > self.input_max):
            raise ContractError("input_min exceeds input_max")
        if not all(np.all(np.isfinite(a)) for a in self.weights + self.biases):
            raise ContractError("non-finite weights")

    @property
    def num_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def num_outputs(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.num_inputs] + [w.shape[0] for w in self.weights]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        """Clamp raw inputs to the declared range, then shift and scale."""
        x = np.clip(x, self.input_min, self.input_max)
        return (x - self.input_mean) / self.input_range

    def forward_normalized(self, z: np.ndarray) -> np.ndarray:
        """Network output in normalized units for normalized inputs (rows)."""
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = np.maximum(z @ w.T + b, 0.0)
        return z @ self.weights[-1].T + self.biases[-1]


def evaluate(net: Network, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """Raw-unit scores for one input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.num_inputs or x.ndim > 2:
        raise ContractError(f"expected {net.num_inputs} inputs, got shape {x.shape}")
    out = net.forward_normalized(net.normalize(x))
    return out * net.output_range + net.output_mean


def _fmt(values) -> str:
    return ",".join(repr(float(v)) for v in np.ravel(values)) + ","


def dumps(net: Network) -> str:
    lines = []
    for h in (net.header or "").splitlines() or [""]:
        lines.append("// " + h if h else "//")
    lines.append(str(len(net.weights)))
    lines.append(",".join(str(s) for s in net.layer_sizes) + ",")
    lines.append(_fmt(net.input_min))
    lines.append(_fmt(net.input_max))
    lines.append(_fmt(np.append(net.input_mean, net.output_mean)))
    lines.append(_fmt(np.append(net.input_range, net.output_range)))
    for w, b in zip(net.weights, net.biases):
        lines.extend(_fmt(row) for row in w)
        lines.extend(_fmt([v]) for v in b)
    return "\n".join(lines) + "\n"


def save(net: Network, path: str | Path):
    Path(path).write_text(dumps(net))


def loads(text: str, source: str = "<string>") -> Network:
    raw = text.splitlines()
    header = []
    pos = 0
    while pos < len(raw) and raw[pos].startswith("//"):
        header.append(raw[pos][2:].strip())
        pos += 1

    def take(expected: int | None = None, ints: bool = False):
        nonlocal pos
        if pos >= len(raw):
            raise NnetParseError(f"{source}: unexpected end of file at line {pos + 1}")
        line_no = pos + 1
        parts = [p for p in raw[pos].strip().split(",") if p.strip()]
        pos += 1
        try:
            vals = [int(p) if ints else float(p) for p in parts]
        except ValueError as exc:
            raise NnetParseError(f"{source}: line {line_no}: {exc}") from None
        if not ints and not all(math.isfinite(v) for v in vals):
            raise NnetParseError(f"{source}: line {line_no}: non-finite value")
        if expected is not None and len(vals) != expected:
            raise NnetParseError(f"{source}: line {line_no}: expected {expected} values, got {len(vals)}")
        return vals

    (n_layers,) = take(1, ints=True)
    sizes = take(n_layers + 1, ints=True)
    if n_layers < 1 or min(sizes) < 1:
        raise NnetParseError(f"{source}: line {pos}: invalid layer sizes")
    n_in = sizes[0]
    mins, maxes = take(n_in), take(n_in)
    means, ranges = take(n_in + 1), take(n_in + 1)
    weights, biases = [], []
    for i in range(n_layers):
        weights.append(np.array([take(sizes[i]) for _ in range(sizes[i + 1])]))
        biases.append(np.array([take(1)[0] for _ in range(sizes[i + 1])]))
    try:
        return Network(weights, biases, mins, maxes, means[:-1], ranges[:-1], means[-1], ranges[-1],
                       "\n".join(header))
    except ContractError as exc:
        raise NnetParseError(f"{source}: {exc}") from None


def load(path: str | Path) -> Network:
    return loads(Path(path).read_text(), str(path))
