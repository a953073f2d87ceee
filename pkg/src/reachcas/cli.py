"""``reach-cas`` command line: table generation, training, cell verification and reachability."""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, RunConfig, dump_config, load_config
from .hcas import NETWORK_TAUS, HAdvisory, HGrid, build_hcas_mdp, to_cartesian_training_set
from .mdp import CapacityError, ContractError, load_qtable, save_qtable, solve
from .nnet import Network, NnetParseError, evaluate, load, save
from .reach.delay import run_reachability_delayed
from .reach.engine import Verdict, write_summary, write_trace
from .reach.horizontal import (HReachGrid, expand_horizontal_cache, horizontal_model, horizontal_network_sets,
                               inflate_cells_for_sensor_error, network_taus, safe_region_init)
from .reach.vertical import VReachGrid, cache_boxes, vertical_cache, vertical_model
from .trainer import TrainingDiverged, policy_agreement, train
from .vcas import VAdvisory, VGrid, build_vcas_mdp, training_set
from .verifier import load_advisory_cache, sample_audit, save_advisory_cache

log = logging.getLogger("reachcas")

EXIT_OK, EXIT_UNSAFE, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{p}: no such file")
    return p


def _table_grid(cfg: RunConfig):
    if cfg.system == "vertical":
        return VGrid.paper() if cfg.scale == "paper" else VGrid.desk()
    return HGrid.paper() if cfg.scale == "paper" else HGrid.desk()


def _reach_grid(cfg: RunConfig):
    if cfg.system == "vertical":
        return VReachGrid.paper() if cfg.scale == "paper" else VReachGrid.desk(cfg.reach_tau_max)
    grid = HReachGrid.paper() if cfg.scale == "paper" else HReachGrid.desk(cfg.reach_tau_max)
    grid.ring = cfg.ring_radius
    return grid


def _csv_header(fh, cfg: RunConfig):
    fh.write(f"# {cfg.header_line()}\n")


def _check_out(*paths):
    """Fail before any long computation if an output file's directory is missing."""
    for p in paths:
        if p is not None and not Path(p).parent.is_dir():
            raise UsageError(f"output directory {Path(p).parent} does not exist")


def _write_csv(path, cfg: RunConfig, header, rows):
    with open(path, "w", newline="") as fh:
        _csv_header(fh, cfg)
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _prepend_header(path, cfg: RunConfig):
    p = Path(path)
    p.write_text(f"# {cfg.header_line()}\n" + p.read_text())


def _net_header(cfg: RunConfig, s_adv: int, tau: int | None, inputs: str) -> str:
    lines = [cfg.header_line(), f"system={cfg.system} s_adv={s_adv}" + ("" if tau is None else f" tau={tau}"),
             f"inputs={inputs}"]
    return "\n".join(lines)


def _net_name(s_adv: int, tau: int | None) -> str:
    return f"sadv{s_adv}.nnet" if tau is None else f"sadv{s_adv}_tau{tau:02d}.nnet"


def _net_seed(cfg: RunConfig, s_adv: int, tau: int | None) -> int:
    return cfg.seed * 1000 + s_adv * 100 + (tau or 0)


def _horizontal_taus(q) -> list[int]:
    top = q.grid.cuts[0].max()
    return [t for t in NETWORK_TAUS if t <= top]


def train_jobs(system: str, table_tau_max: float) -> list[tuple[int, int | None]]:
    """(s_adv, network tau) pairs to train: one per previous advisory, times tau for horizontal."""
    if system == "vertical":
        return [(k, None) for k in range(len(VAdvisory))]
    return [(k, t) for t in NETWORK_TAUS if t <= table_tau_max for k in range(len(HAdvisory))]


def _load_nets(cfg: RunConfig, directory) -> tuple[object, str]:
    """Networks from a training directory plus a digest of their bytes."""
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"{d}: no such directory")
    h = hashlib.sha256()
    if cfg.system == "vertical":
        nets = []
        for k in range(len(VAdvisory)):
            p = _require_file(d / _net_name(k, None))
            h.update(p.read_bytes())
            nets.append(load(p))
        return nets, h.hexdigest()
    nets = {}
    for p in sorted(d.glob("sadv*_tau*.nnet")):
        s, t = p.stem[4:].split("_tau")
        h.update(p.read_bytes())
        nets[int(s), int(t)] = load(p)
    if not nets:
        raise UsageError(f"{d}: no horizontal networks (sadv<k>_tau<t>.nnet)")
    return nets, h.hexdigest()


def _load_cache(cfg: RunConfig, path):
    """Rebuild the (s_adv, tau, cell, advisory) advisory-set array and its grid."""
    sets, meta = load_advisory_cache(_require_file(path))
    if meta.get("system") != cfg.system or meta.get("scale") != cfg.scale:
        raise UsageError(f"{path}: cache is for {meta.get('system')}/{meta.get('scale')}, "
                         f"config asks for {cfg.system}/{cfg.scale}")
    grid = _reach_grid(cfg)
    if cfg.system == "vertical":
        grid.tau_max = int(meta["tau_max"])
        n_adv = len(VAdvisory)
        expected = n_adv * grid.num_cells
        if sets.shape != (expected, n_adv):
            raise UsageError(f"{path}: {sets.shape[0]} rows, grid needs {expected}")
        return grid, sets.reshape(n_adv, grid.tau_max + 1, grid.cells.size, n_adv), meta
    grid.tau_max = int(meta["tau_max"])
    keys = [tuple(k) for k in meta["networks"]]
    n = grid.cells.size
    if sets.shape != (n * len(keys), len(HAdvisory)):
        raise UsageError(f"{path}: {sets.shape[0]} rows, grid needs {n * len(keys)}")
    per_net = {k: sets[i * n:(i + 1) * n] for i, k in enumerate(keys)}
    return grid, expand_horizontal_cache(grid, per_net), meta


def _model(cfg: RunConfig, grid, cache, delta: float, safe_region=None):
    if cfg.system == "vertical":
        if safe_region is not None:
            raise UsageError("--safe-region applies to the horizontal system only")
        return vertical_model(grid, cache, delta, saturate=cfg.saturate_rate)
    initial = None
    if safe_region is not None:
        initial = safe_region_init(grid, *safe_region)
    return horizontal_model(grid, cache, delta, initial=initial)


def _reach_options(cfg: RunConfig, meta: dict):
    if abs(float(meta.get("sensor_error", 0.0)) - cfg.sensor_error) > 1e-12:
        raise UsageError(f"cache was verified with sensor_error={meta.get('sensor_error', 0.0)}, "
                         f"run asks for {cfg.sensor_error}; rerun verify-cells")
    return cfg.reversal_limit_value(), cfg.safe_region_value()


def _run(cfg: RunConfig, model, reversal_limit, keep_sets=False):
    return run_reachability_delayed(model, cfg.pilot_delay, reversal_limit, step_cap=cfg.step_cap,
                                    keep_sets=keep_sets)


def _fmt_sep(v: float) -> str:
    return f"{v:.1f}" if np.isfinite(v) else str(v)


# ---------------------------------------------------------------- commands

def cmd_init_config(args, cfg: RunConfig) -> int:
    text = dump_config(cfg)
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gen_table(args, cfg: RunConfig) -> int:
    grid = _table_grid(cfg)
    print(f"system: {cfg.system} ({cfg.scale} grid)")
    print(f"states: {grid.num_states}")
    if args.dry_run:
        return EXIT_OK
    if args.out is None:
        raise UsageError("gen-table needs --out unless --dry-run is given")
    _check_out(args.out)
    build = build_vcas_mdp if cfg.system == "vertical" else build_hcas_mdp
    mdp = build(grid, cfg.costs(), cfg.terminal_discount, cfg.memory_budget_gb * 1e9)
    q = solve(mdp, tol=cfg.solve_tol, max_sweeps=cfg.max_sweeps, grid=grid.grid)
    meta = dict(cfg.provenance(), system=cfg.system, scale=cfg.scale, costs=cfg.costs().as_dict(),
                sweeps=len(q.residuals), terminal_discount=cfg.terminal_discount)
    save_qtable(q, args.out, meta)
    print(f"residual: {q.residual:.3e} after {len(q.residuals)} sweeps ({'converged' if q.converged else 'NOT converged'})")
    print(f"wrote {args.out}")
    return EXIT_OK


def _train_one(cfg: RunConfig, q, s_adv: int, tau: int | None, out: Path):
    if cfg.system == "vertical":
        x, y = training_set(q, s_adv)
        inputs = "h_ft,hdot_own_ftps,tau_s"
    else:
        x, y = to_cartesian_training_set(q, tau, s_adv)
        inputs = "x_ft,y_ft,psi_rad"
    res = train(x, y, cfg.train_config(_net_seed(cfg, s_adv, tau)), header=_net_header(cfg, s_adv, tau, inputs))
    save(res.network, out)
    loss_path = out.with_suffix(".loss.csv")
    _write_csv(loss_path, cfg, ["epoch", "loss"], ([i, repr(v)] for i, v in enumerate(res.losses)))
    agree = policy_agreement(res.network, x, y)
    print(f"{out.name}: {x.shape[0]} records, final loss {res.losses[-1] if res.losses else float('nan'):.4g}, "
          f"policy agreement {agree:.3f}")


def cmd_train(args, cfg: RunConfig) -> int:
    q = load_qtable(_require_file(args.table))
    names = q.grid.names if q.grid is not None else []
    want = "h" if cfg.system == "vertical" else "rho"
    if want not in names:
        raise UsageError(f"{args.table} is not a {cfg.system} table")
    out = Path(args.out)
    if args.s_adv is not None:
        n_adv = len(VAdvisory) if cfg.system == "vertical" else len(HAdvisory)
        if not 0 <= args.s_adv < n_adv:
            raise UsageError(f"--s-adv must lie in 0..{n_adv - 1}")
        if cfg.system == "horizontal" and args.tau is None:
            raise UsageError("horizontal networks need --tau")
        tau = None if cfg.system == "vertical" else args.tau
        out.parent.mkdir(parents=True, exist_ok=True)
        _train_one(cfg, q, args.s_adv, tau, out)
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    jobs = train_jobs(cfg.system, q.grid.cuts[0].max())
    for k, t in jobs:
        _train_one(cfg, q, k, t, out / _net_name(k, t))
    print(f"trained {len(jobs)} networks into {out}")
    return EXIT_OK


def cmd_nnet_info(args, cfg: RunConfig) -> int:
    net = load(_require_file(args.file))
    for line in net.header.splitlines():
        print(f"header: {line}")
    n_params = sum(w.size + b.size for w, b in zip(net.weights, net.biases))
    print(f"layers: {' x '.join(str(s) for s in net.layer_sizes)}")
    print(f"parameters: {n_params}")
    print(f"input min: {np.array2string(net.input_min, precision=6)}")
    print(f"input max: {np.array2string(net.input_max, precision=6)}")
    print(f"input mean: {np.array2string(net.input_mean, precision=6)}")
    print(f"input range: {np.array2string(net.input_range, precision=6)}")
    print(f"output mean/range: {net.output_mean:.6g} / {net.output_range:.6g}")
    return EXIT_OK


def _audit(cfg: RunConfig, nets, grid, sets_by_net, boxes_by_net, n_boxes: int) -> int:
    rng = np.random.default_rng(cfg.seed)
    bad = 0
    for key in sorted(sets_by_net):
        lo, hi = boxes_by_net[key]
        pick = np.sort(rng.choice(lo.shape[0], size=min(n_boxes, lo.shape[0]), replace=False))
        bad += sample_audit(nets[key], lo[pick], hi[pick], sets_by_net[key][pick], 1000,
                            seed=int(rng.integers(2**31)))
    print(f"sample audit: {min(n_boxes, lo.shape[0])} boxes x {len(sets_by_net)} networks, violations: {bad}")
    return bad


def cmd_verify_cells(args, cfg: RunConfig) -> int:
    _check_out(args.out)
    nets, digest = _load_nets(cfg, args.nets)
    grid = _reach_grid(cfg)
    ck = None
    if args.checkpoint_dir is not None:
        ck = Path(args.checkpoint_dir)
        ck.mkdir(parents=True, exist_ok=True)
    meta = dict(cfg.provenance(), system=cfg.system, scale=cfg.scale, tau_max=grid.tau_max,
                split_budget=cfg.split_budget, sensor_error=cfg.sensor_error, networks_sha256=digest)
    if cfg.system == "vertical":
        if cfg.sensor_error:
            raise UsageError("sensor_error applies to the horizontal system only")
        cache = vertical_cache(grid, nets, cfg.split_budget, cfg.threads, ck)
        rows = cache.reshape(-1, cache.shape[-1])
        meta.update(layout="s_adv,tau,cell", networks=len(nets))
        by_net = {k: cache[k].reshape(-1, cache.shape[-1]) for k in range(len(nets))}
        lo, hi = cache_boxes(grid)
        boxes = {k: (lo, hi) for k in range(len(nets))}
        keyed = dict(enumerate(nets))
    else:
        by_net = horizontal_network_sets(grid, nets, cfg.split_budget, cfg.threads, cfg.sensor_error, ck)
        keys = sorted(by_net)
        rows = np.concatenate([by_net[k] for k in keys])
        meta.update(layout="network,cell", networks=[list(k) for k in keys])
        # soundness is checked on the uninflated boxes: inflation only grows the sets
        lo, hi = inflate_cells_for_sensor_error(*grid.cells.boxes(), cfg.sensor_error)
        boxes = {k: (lo, hi) for k in keys}
        keyed = nets
    save_advisory_cache(rows, args.out, meta)
    print(f"cells: {rows.shape[0]} ({grid.num_cells} grid cells x {len(by_net)} networks)")
    print(f"mean advisories per cell: {rows.sum(axis=1).mean():.3f}")
    print(f"wrote {args.out}")
    if args.sample_audit:
        if _audit(cfg, keyed, grid, by_net, boxes, args.sample_audit):
            return EXIT_INTERNAL
    return EXIT_OK


def cmd_reach(args, cfg: RunConfig) -> int:
    _check_out(args.trace, args.summary)
    grid, cache, meta = _load_cache(cfg, args.cache)
    limit, region = _reach_options(cfg, meta)
    model = _model(cfg, grid, cache, cfg.delta, region)
    keep = args.trace is not None
    res = _run(cfg, model, limit, keep_sets=keep)
    print(f"verdict: {res.verdict.value}")
    print(f"delta: {cfg.delta:g}  pilot delay: {cfg.pilot_delay}  reversal limit: {cfg.reversal_limit}")
    print(f"steps: {len(res.steps) - 1}")
    print(f"tau=0 min separation: {_fmt_sep(res.tau0_min_sep)}")
    print(f"converged min separation: {_fmt_sep(res.converged_min_sep)}")
    if res.witness:
        names = model.names
        lo, hi = model.grid.boxes()
        print("witness:")
        for step, tau, a, c in res.witness:
            box = ", ".join(f"{n}=[{lo[c, d]:.6g}, {hi[c, d]:.6g}]" for d, n in enumerate(model.grid.names))
            print(f"  step {step} tau {tau} {names[a] if names else a}: {box}")
    if args.trace is not None:
        write_trace(res, model, args.trace)
        _prepend_header(args.trace, cfg)
    if args.summary is not None:
        write_summary(res, args.summary)
        _prepend_header(args.summary, cfg)
    return EXIT_OK if res.verdict is Verdict.SAFE else EXIT_UNSAFE


def cmd_sweep(args, cfg: RunConfig) -> int:
    _check_out(args.out)
    grid, cache, meta = _load_cache(cfg, args.cache)
    limit, region = _reach_options(cfg, meta)
    rows = []
    for d in cfg.delta_list():
        res = _run(cfg, _model(cfg, grid, cache, d, region), limit)
        rows.append([repr(d), repr(res.tau0_min_sep), repr(res.converged_min_sep), res.verdict.value])
        print(f"delta {d:g}: {res.verdict.value} (tau=0 {_fmt_sep(res.tau0_min_sep)}, "
              f"converged {_fmt_sep(res.converged_min_sep)})")
    _write_csv(args.out, cfg, ["delta", "tau0_min_sep", "converged_min_sep", "verdict"], rows)
    print(f"wrote {args.out}")
    return EXIT_OK


def _policy_rows(cfg: RunConfig, q, nets):
    """Best advisory of the table (and networks, if given) for previous advisory COC."""
    if cfg.system == "vertical":
        x, y = training_set(q, 0)
        header = ["h", "hdot_own", "tau", "table_best"]
        net_best = None if nets is None else np.argmax(evaluate(nets[0], x), axis=1)
        for i in range(x.shape[0]):
            row = [repr(float(v)) for v in x[i]] + [int(np.argmax(y[i]))]
            yield header, row + ([] if net_best is None else [int(net_best[i])])
        return
    for t in _horizontal_taus(q):
        x, y = to_cartesian_training_set(q, t, 0)
        net = None if nets is None else nets.get((0, t))
        net_best = None if net is None else np.argmax(evaluate(net, x), axis=1)
        header = ["tau", "x", "y", "psi", "table_best"]
        for i in range(x.shape[0]):
            row = [t] + [repr(float(v)) for v in x[i]] + [int(np.argmax(y[i]))]
            yield header, row + ([] if net_best is None else [int(net_best[i])])


def cmd_export_plot_data(args, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.table is None and args.cache is None:
        raise UsageError("export-plot-data needs --table and/or --cache")
    if args.table is not None:
        q = load_qtable(_require_file(args.table))
        nets = None if args.nets is None else _load_nets(cfg, args.nets)[0]
        rows = list(_policy_rows(cfg, q, nets))
        header = rows[0][0] + ([] if nets is None else ["network_best"])
        _write_csv(out / "policy.csv", cfg, header, (r for _, r in rows))
        print(f"wrote {out / 'policy.csv'} ({len(rows)} rows)")
    if args.cache is not None:
        grid, cache, meta = _load_cache(cfg, args.cache)
        limit, region = _reach_options(cfg, meta)
        model = _model(cfg, grid, cache, cfg.delta, region)
        res = _run(cfg, model, limit, keep_sets=True)
        write_trace(res, model, out / "reach_trace.csv", out / "reach_summary.csv")
        for name in ("reach_trace.csv", "reach_summary.csv"):
            _prepend_header(out / name, cfg)
        print(f"wrote {out / 'reach_trace.csv'} and {out / 'reach_summary.csv'} (verdict {res.verdict.value})")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (key = value)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--threads", type=int, help="worker threads (does not change results)")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="reach-cas", description=__doc__)
    p.add_argument("--version", action="version", version=f"reach-cas {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init-config", parents=[common], help="write a configuration file with defaults")
    s.add_argument("--out")
    s.set_defaults(func=cmd_init_config)

    s = sub.add_parser("gen-table", parents=[common], help="build and solve the score table")
    s.add_argument("--out")
    s.add_argument("--dry-run", action="store_true", help="print the state count without building")
    s.set_defaults(func=cmd_gen_table)

    s = sub.add_parser("train", parents=[common], help="fit networks to a score table")
    s.add_argument("--table", required=True)
    s.add_argument("--out", required=True, help="network file with --s-adv, else a directory")
    s.add_argument("--s-adv", type=int)
    s.add_argument("--tau", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("nnet-info", parents=[common], help="describe a network file")
    s.add_argument("file")
    s.set_defaults(func=cmd_nnet_info)

    s = sub.add_parser("verify-cells", parents=[common], help="compute per-cell advisory sets")
    s.add_argument("--nets", required=True, help="directory written by train")
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint-dir", help="resume interrupted runs from here")
    s.add_argument("--sample-audit", type=int, default=0, metavar="N",
                   help="check N random cells per network with 1000 sampled points each")
    s.add_argument("--sensor-error", type=float)
    s.set_defaults(func=cmd_verify_cells)

    for name, func, text in (("reach", cmd_reach, "run closed-loop reachability"),
                             ("sweep", cmd_sweep, "reachability over a list of deltas")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--cache", required=True, help="advisory-set cache from verify-cells")
        if name == "reach":
            s.add_argument("--delta", type=float)
            s.add_argument("--trace", help="per-step reachable cells CSV")
            s.add_argument("--summary", help="per-step summary CSV")
        else:
            s.add_argument("--deltas", help="comma-separated deltas")
            s.add_argument("--out", required=True)
        s.add_argument("--pilot-delay", type=int)
        s.add_argument("--reversal-limit")
        s.add_argument("--sensor-error", type=float)
        s.add_argument("--safe-region", metavar="T,D")
        s.set_defaults(func=func)

    s = sub.add_parser("export-plot-data", parents=[common], help="write policy and reach-set CSVs")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--table")
    s.add_argument("--nets")
    s.add_argument("--cache")
    s.set_defaults(func=cmd_export_plot_data)
    return p


_FLAG_KEYS = {"threads": "threads", "seed": "seed", "delta": "delta", "deltas": "deltas",
              "pilot_delay": "pilot_delay", "reversal_limit": "reversal_limit",
              "sensor_error": "sensor_error", "safe_region": "safe_region"}


def _config_from_args(args) -> RunConfig:
    overrides = list(args.set)
    for flag, key in _FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides.append(f"{key} = {v}")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        with threadpool_limits(1):  # keep BLAS results independent of the machine's core count
            return args.func(args, cfg)
    except (ConfigError, UsageError, NnetParseError, ContractError, FileNotFoundError) as exc:
        print(f"reach-cas: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapacityError as exc:
        print(f"reach-cas: capacity: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"reach-cas: training failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - any other failure is a bug
        log.debug("internal error", exc_info=True)
        print(f"reach-cas: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
