"""Command-line entry point.

Subcommands ``robot2d``, ``ins-align`` and ``selftest``. Settings come from
an optional ``key=value`` file (``--config``), overridden by flags. Exit
codes: 0 success, 1 selftest failure, 2 bad configuration, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import dynamics, lie, selftest, sim, smoother
from .models import InsConfig, Robot2dConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

NUMERIC_ERRORS = (
    ArithmeticError,
    np.linalg.LinAlgError,
    lie.AngleAtCut,
    dynamics.NonComposable,
)

LENGTH_HEADER = ["retraction", "iteration", "length_m", "max_dyn_residual", "subspace_residual"]
TRAJ_HEADER = ["retraction", "state", "x", "y"]
YAW_HEADER = ["t", "method", "yaw_err_deg", "sigma3_deg"]
SUMMARY_HEADER = ["method", "final_rmse_deg", "pct_within_3sigma"]


class ConfigError(ValueError):
    pass


def fmt(v: Any) -> str:
    """17 significant digits for floats so values round-trip."""
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _convert(value: str, default: Any, key: str) -> Any:
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, (list, tuple)):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            if default and isinstance(default[0], (int, float)):
                return tuple(float(p) for p in parts)
            return parts
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


# keys shared by both scenarios; everything else maps onto the scenario config
COMMON = {"retraction": [], "seed": 0, "out": ".", "max_iters": 50, "runs": 10}


def build_config(scenario: str, settings: dict[str, Any]):
    """Split merged settings into the scenario dataclass and run options."""
    cls = Robot2dConfig if scenario == "robot2d" else InsConfig
    base = cls()
    fields = {f.name: getattr(base, f.name) for f in dataclasses.fields(cls)}
    kwargs, run = {}, dict(COMMON)
    for key, val in settings.items():
        if val is None:
            continue
        if key in fields:
            kwargs[key] = _convert(val, fields[key], key) if isinstance(val, str) else val
        elif key in COMMON:
            run[key] = _convert(val, COMMON[key], key) if isinstance(val, str) else val
        else:
            raise ConfigError(f"unknown setting {key!r} for {scenario}")
    try:
        cfg = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    kinds = run["retraction"] or (["invariant", "gtsam"] if scenario == "robot2d" else list(cfg.methods))
    try:
        run["retraction"] = [sim.parse_kind(k) for k in kinds]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, run


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_robot2d(cfg: Robot2dConfig, run: dict[str, Any], out: Path) -> None:
    if cfg.n_steps < 0 or cfg.dt <= 0:
        raise ConfigError("steps must be non-negative and dt positive")
    if run["max_iters"] < 1:
        raise ConfigError("max_iters must be at least 1")
    kinds = run["retraction"]
    rows = []
    traj: dict[int, list] = {}
    if cfg.n_steps > 0:
        truth = sim.make_robot2d_truth(cfg)
        problem = sim.robot2d_problem(cfg, truth, np.random.default_rng(run["seed"]))
        init = smoother.project_onto_dynamics(problem.steps, problem.prior.mean)
        opts = smoother.GaussNewtonOptions(max_iters=run["max_iters"], keep_xi=False, keep_states=True)
        for kind in kinds:
            est = smoother.gauss_newton(problem, init, kind, opts)
            for w in est.warnings:
                print(f"warning [{kind.value}]: {w}", file=sys.stderr)
            for rec in est.iteration_log:
                rows.append([kind.value, rec.iteration, rec.length, rec.max_dyn_residual, rec.subspace_residual])
                for i, x in enumerate(rec.states):
                    traj.setdefault(rec.iteration, []).append([kind.value, i, x.translation[0], x.translation[1]])
    write_csv(out / "length_per_iter.csv", LENGTH_HEADER, rows)
    for k in sorted(traj):
        write_csv(out / f"trajectory_iter{k}.csv", TRAJ_HEADER, traj[k])


def cmd_ins_align(cfg: InsConfig, run: dict[str, Any], out: Path) -> None:
    if run["runs"] < 1:
        raise ConfigError("runs must be at least 1")
    if cfg.window < 2:
        raise ConfigError("window must be at least 2")
    methods = [k.value for k in run["retraction"]]
    metrics = sim.run_monte_carlo(cfg, methods, run["runs"], run["seed"], cfg.window)
    rows = []
    for m in methods:
        rmse = metrics.rmse(m)
        sig = np.nanmean(metrics.sigma3_deg[m], axis=0)
        rows.extend([t, m, e, s] for t, e, s in zip(metrics.times, rmse, sig))
    write_csv(out / "yaw_error.csv", YAW_HEADER, rows)
    write_csv(out / "summary.csv", SUMMARY_HEADER,
              [[m, metrics.final_rmse(m), metrics.pct_within_3sigma(m)] for m in methods])
    for m in methods:
        print(f"{m:10s} final yaw RMSE {metrics.final_rmse(m):8.3f} deg, "
              f"{metrics.pct_within_3sigma(m):5.1f}% of runs inside 3 sigma")


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invsmooth", description="Invariant smoothing experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--retraction", action="append", choices=[k.value for k in smoother.RetractionKind],
                        help="retraction to run; repeat for several (default: scenario preset)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path, help="output directory (created if missing)")
        sp.add_argument("--config", type=Path, help="key=value settings file; flags take precedence")

    r = sub.add_parser("robot2d", help="planar robot batch smoothing")
    common(r)
    r.add_argument("--steps", type=int, dest="n_steps")
    r.add_argument("--speed", type=float)
    r.add_argument("--heading-error", type=float, help="initial heading error [rad]")
    r.add_argument("--max-iters", type=int)

    a = sub.add_parser("ins-align", help="inertial alignment Monte Carlo")
    common(a)
    a.add_argument("--window", type=int)
    a.add_argument("--runs", type=int)
    a.add_argument("--imu-rate", type=float)
    a.add_argument("--gps-rate", type=float)
    a.add_argument("--heading-error", type=float, dest="heading_error_deg", help="[deg]")
    a.add_argument("--zero-noise", action="store_const", const=True, default=None)

    s = sub.add_parser("selftest", help="run the invariant suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol-scale", type=float, default=1.0, help="multiply all thresholds (<1 tightens)")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "selftest":
        if not args.tol_scale > 0:
            print("error: --tol-scale must be positive", file=sys.stderr)
            return EXIT_CONFIG
        return selftest.main(args.seed, args.tol_scale)

    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    try:
        settings: dict[str, Any] = read_config_file(args.config) if args.config else {}
        settings.update(flags)
        cfg, run = build_config(args.command, settings)
        out = Path(run["out"])
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "robot2d":
            cmd_robot2d(cfg, run, out)
        else:
            cmd_ins_align(cfg, run, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
