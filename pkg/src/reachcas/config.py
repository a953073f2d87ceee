"""Run configuration: a flat ``key = value`` text file plus command-line overrides."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .costs import Costs
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    system: str = "vertical"  # vertical | horizontal
    scale: str = "desk"  # desk | paper
    seed: int = 0
    threads: int = 1
    # score table
    solve_tol: float = 1e-3
    max_sweeps: int = 2000
    terminal_discount: float = 0.95
    memory_budget_gb: float = 3.0
    cost_nmac: float = -1.0
    cost_alert: float = -1e-4
    cost_reversal: float = -8e-3
    cost_strengthen: float = -5e-4
    cost_weaken: float = -3e-4
    cost_crossing: float = -1e-4
    cost_coc_conflict: float = -1e-2
    # training
    epochs: int = 3000
    batch_size: int = 512
    hidden: str = "25,25,25,25,25"
    loss_c: float = 40.0
    learning_rate: float = 1e-3
    # cell verification
    split_budget: int = 6
    chunk: int = 2048
    sensor_error: float = 0.0
    # reachability
    reach_tau_max: int = 20
    delta: float = 0.0
    deltas: str = "0,1,2,3,4,5,6,7,8,9,10"
    pilot_delay: int = 0
    reversal_limit: str = "none"
    safe_region: str = "none"  # "t,d" in s and ft
    ring_radius: float = 48000.0
    step_cap: int = 500
    saturate_rate: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.system not in ("vertical", "horizontal"):
            raise ConfigError(f"system must be vertical or horizontal, got {self.system!r}")
        if self.scale not in ("desk", "paper"):
            raise ConfigError(f"scale must be desk or paper, got {self.scale!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.solve_tol <= 0 or self.max_sweeps < 1:
            raise ConfigError("solve_tol must be > 0 and max_sweeps >= 1")
        if not 0 < self.terminal_discount < 1:
            raise ConfigError("terminal_discount must lie in (0, 1)")
        if self.split_budget < 0 or self.chunk < 1:
            raise ConfigError("split_budget must be >= 0 and chunk >= 1")
        if self.delta < 0 or self.sensor_error < 0 or self.pilot_delay < 0:
            raise ConfigError("delta, sensor_error and pilot_delay must be non-negative")
        if self.reach_tau_max < 0 or self.step_cap < 1:
            raise ConfigError("reach_tau_max must be >= 0 and step_cap >= 1")
        try:
            self.costs()
            self.train_config()
            self.delta_list()
            self.reversal_limit_value()
            self.safe_region_value()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # typed views ----------------------------------------------------------
    def costs(self) -> Costs:
        return Costs(self.cost_nmac, self.cost_alert, self.cost_reversal, self.cost_strengthen,
                     self.cost_weaken, self.cost_crossing, self.cost_coc_conflict)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        hidden = tuple(int(v) for v in self.hidden.split(",") if v.strip())
        if not hidden or min(hidden) < 1:
            raise ValueError("hidden must list positive layer widths")
        return TrainConfig(hidden=hidden, epochs=self.epochs, batch_size=self.batch_size, c=self.loss_c,
                           lr=self.learning_rate, seed=self.seed if seed is None else seed)

    def delta_list(self) -> list[float]:
        vals = [float(v) for v in self.deltas.split(",") if v.strip()]
        if any(v < 0 for v in vals):
            raise ValueError("deltas must be non-negative")
        return vals

    def reversal_limit_value(self) -> int | None:
        if self.reversal_limit.strip().lower() == "none":
            return None
        v = int(self.reversal_limit)
        if v < 0:
            raise ValueError("reversal_limit must be >= 0 or none")
        return v

    def safe_region_value(self) -> tuple[float, float] | None:
        if self.safe_region.strip().lower() == "none":
            return None
        t, d = (float(v) for v in self.safe_region.split(","))
        if t < 0 or d < 0:
            raise ValueError("safe_region needs non-negative t,d")
        return t, d

    # identity -------------------------------------------------------------
    def config_hash(self) -> str:
        """Hash of every setting that can change results (the thread count cannot)."""
        d = asdict(self)
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def provenance(self) -> dict:
        return {"tool": "reach-cas", "version": __version__, "config_hash": self.config_hash(), "seed": self.seed}

    def header_line(self) -> str:
        p = self.provenance()
        return f"reach-cas {p['version']} config_hash={p['config_hash']} seed={p['seed']}"


_DOCS = {
    "system": "vertical | horizontal",
    "scale": "desk | paper grids",
    "threads": "worker threads for cell verification (results do not depend on it)",
    "terminal_discount": "discount of the tau = 0 slice of the table",
    "reversal_limit": "none, or the number of reversals allowed under pilot delay",
    "safe_region": "none, or t,d for the horizontal initial-set exclusion",
    "saturate_rate": "clip the ownship climb rate at the reach grid's envelope",
}


def _coerce(name: str, typ, raw: str):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


def _field_types() -> dict:
    return {f.name: f.type for f in fields(RunConfig)}


def parse_pairs(pairs, source: str = "<overrides>") -> dict:
    types = _field_types()
    out = {}
    for lineno, line in pairs:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, types[key], value)
    return out


def load_config(path: str | Path | None = None, overrides=()) -> RunConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        values.update(parse_pairs(enumerate(p.read_text().splitlines(), 1), str(p)))
    values.update(parse_pairs(((i, o) for i, o in enumerate(overrides, 1)), "--set"))
    return RunConfig(**values)


def dump_config(cfg: RunConfig | None = None) -> str:
    cfg = cfg or RunConfig()
    lines = ["# reach-cas run configuration (key = value; '#' starts a comment)"]
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        text = str(v).lower() if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v)
        doc = _DOCS.get(f.name)
        lines.append(f"{f.name} = {text}" + (f"  # {doc}" if doc else ""))
    return "\n".join(lines) + "\n"
