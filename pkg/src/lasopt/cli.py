"""Command-line entry point: lasopt <simulate|optimize|grad-check|kkt-check|soc-check>."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from datetime import datetime
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from lasopt import diagnostics, objective
from lasopt.config import RunConfig, load_config, read_path_csv, write_path_csv
from lasopt.model import ConfigError, LaserPath, ShapeError, constraint_trace
from lasopt.optimize import MultiplierEstimate, penalty_loop
from lasopt.pde import SolverError, adjoint_solve, forward_solve
from lasopt.problem import DomainError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ABORTED = 0, 2, 3, 4
log = logging.getLogger("lasopt")


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def make_run_dir(base, command: str, seed: int) -> Path:
    """Unique directory named by command, timestamp and seed."""
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path(base)
    base.mkdir(parents=True, exist_ok=True)
    for k in range(1000):
        suffix = "" if k == 0 else f"-{k}"
        path = base / f"{command}-{stamp}-seed{seed}{suffix}"
        try:
            path.mkdir()
            return path
        except FileExistsError:
            continue
    raise OSError(f"cannot create a unique run directory under {base}")


def _builtin_path(name: str, run: RunConfig) -> LaserPath:
    grid, region = run.grid, run.region
    center = region.center if region.center is not None else np.array([0.5 * grid.Lx, 0.5 * grid.Ly])
    if name == "constant":
        return LaserPath.constant(center, grid.nt, grid.T_final)
    if name == "circle":
        radius = 0.5 * float(getattr(region, "radius", np.min(getattr(region, "semi_axes", [0.2]))))
        return LaserPath.circle(center, radius, grid.nt, grid.T_final)
    if name == "line":
        return LaserPath.line(center - [0.1, 0.0], center + [0.1, 0.0], grid.nt, grid.T_final)
    raise ConfigError("builtin_path", f"unknown builtin path {name!r}")


def _start_path(args, run: RunConfig) -> LaserPath:
    if getattr(args, "path_file", None):
        return read_path_csv(args.path_file, run.grid)
    if getattr(args, "builtin_path", None):
        return _builtin_path(args.builtin_path, run)
    return run.start.build(run.grid)


def _random_path(run: RunConfig, seed: int) -> LaserPath:
    """Smooth random path inside the scan region: a few low sine modes around the centre."""
    rng = np.random.default_rng(seed)
    grid, region = run.grid, run.region
    t = grid.times / grid.T_final
    modes = np.arange(1, 4)
    coef = rng.standard_normal((3, 2)) / modes[:, None] ** 2
    offset = np.sin(np.pi * np.outer(t, modes)) @ coef
    center = region.center if region.center is not None else np.array([0.5 * grid.Lx, 0.5 * grid.Ly])
    values = center + offset
    g = constraint_trace(LaserPath(values, grid.T_final), region)
    shrink = 1.0
    while np.any(g > -0.1 * region.scale) and shrink > 1e-3:
        shrink *= 0.7
        values = center + shrink * offset
        g = constraint_trace(LaserPath(values, grid.T_final), region)
    return LaserPath(values, grid.T_final)


class StateDir:
    """Artifacts of a previous optimize run: final path, tau and multiplier."""

    def __init__(self, directory, run: RunConfig):
        directory = Path(directory)
        try:
            report = json.loads((directory / "report.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("state_dir", f"unreadable state directory {directory}: {exc}") from None
        self.path = read_path_csv(directory / "path.csv", run.grid)
        self.tau = float(report["tau"])
        mult = report.get("multiplier")
        if mult is None:
            raise ConfigError("state_dir", "report has no multiplier")
        lam = np.asarray(mult["lambda"], dtype=float)
        if lam.shape != (run.grid.nt + 1,):
            raise ConfigError("state_dir", "multiplier length does not match nt+1")
        self.multiplier = MultiplierEstimate(lam, float(mult["mu"]), np.asarray(mult["active"], dtype=bool),
                                             float(mult["eps_act"]), float(mult["kappa"]))
        records = [r for r in report.get("records", []) if r.get("converged")]
        self.inner_tol = float(records[-1]["tol"]) if records else float(run.schedule.tol0)


def cmd_simulate(args, run: RunConfig, out: Path) -> tuple[int, dict]:
    path = _start_path(args, run)
    state = forward_solve(run.model, run.grid, path, theta=run.theta, region=run.region)
    files = state.write_snapshots(out / "snapshots")
    tau = run.start_tau
    cost = objective.eval_cost(run.model, run.grid, state, path, tau, theta=run.theta, region=run.region)
    write_path_csv(out / "path.csv", path)
    _write_json(out / "cost.json", {"tau": tau, "cost": cost.to_dict(), "config": run.to_dict()})
    return EXIT_OK, {"snapshots": len(files), "total_cost": cost.total}


def _log_record(rec) -> None:
    log.info("kappa=%.3g cost=%.6g violation=%.3g inner=%d status=%s", rec.kappa, rec.cost, rec.max_violation,
             rec.inner_iterations, rec.status)


def cmd_optimize(args, run: RunConfig, out: Path) -> tuple[int, dict]:
    path = _start_path(args, run)
    report = penalty_loop(run.model, run.grid, run.schedule, (path, run.start_tau), region=run.region,
                          theta=run.theta, log=_log_record)
    report.config = run.to_dict()
    report.write_json(out / "report.json")
    report.write_iterations_csv(out / "iterations.csv")
    write_path_csv(out / "path.csv", report.path)
    with (out / "outer.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        keys = ["kappa", "tol", "cost", "penalty", "max_violation", "inner_iterations", "grad_norm", "tau",
                "lambda_l2", "status"]
        writer.writerow(keys)
        for rec in report.records:
            writer.writerow([getattr(rec, k) for k in keys])
    if report.multiplier is not None:
        g = constraint_trace(report.path, run.region)
        with (out / "multiplier.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "lambda", "g", "active"])
            for row in zip(run.grid.times, report.multiplier.lam, g, report.multiplier.active):
                writer.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), int(row[3])])
    code = EXIT_ABORTED if report.aborted else EXIT_OK
    return code, {"tau": report.tau, "aborted": report.aborted,
                  "records": [{"kappa": r.kappa, "inner_iterations": r.inner_iterations, "status": r.status}
                              for r in report.records]}


def cmd_grad_check(args, run: RunConfig, out: Path) -> tuple[int, dict]:
    if args.state_dir:
        state = StateDir(args.state_dir, run)
        path, tau = state.path, state.tau
    else:
        path, tau = _random_path(run, run.seed), run.start_tau
    result = diagnostics.gradient_check(run.model, run.grid, path, tau, region=run.region, theta=run.theta,
                                        seed=run.seed)
    result["tau"] = tau
    result["config"] = run.to_dict()
    _write_json(out / "grad_check.json", result)
    return (EXIT_OK if result["passed"] else 1), {"max_rel_error": result["max_rel_error"]}


def _require_state(args, run) -> StateDir:
    if not args.state_dir:
        raise ConfigError("state_dir", "this command needs --state-dir from an optimize run")
    return StateDir(args.state_dir, run)


def cmd_kkt_check(args, run: RunConfig, out: Path) -> tuple[int, dict]:
    st = _require_state(args, run)
    tol = args.tol if args.tol is not None else 10.0 * st.inner_tol
    cfg, grid = run.model, run.grid
    rep = diagnostics.kkt_check(cfg, grid, st.path, st.tau, st.multiplier, region=run.region, theta=run.theta,
                                tol=tol)
    state = forward_solve(cfg, grid, st.path, theta=run.theta, region=run.region)
    adj = adjoint_solve(cfg, grid, st.path, st.tau, state, theta=run.theta, region=run.region)
    reg = diagnostics.regularity_check(cfg, grid, st.path, st.tau, st.multiplier, adj, region=run.region)
    reg.write_csv(out / "regularity_nodes.csv")
    reg_dict = reg.to_dict()
    reg_dict.pop("nodes")
    _write_json(out / "kkt.json", {**rep.to_dict(), "regularity": reg_dict, "config": run.to_dict()})
    return EXIT_OK, {"verdict": rep.verdict}


def cmd_soc_check(args, run: RunConfig, out: Path) -> tuple[int, dict]:
    st = _require_state(args, run)
    cfg, grid = run.model, run.grid
    tol = args.tol if args.tol is not None else 10.0 * st.inner_tol
    cone = diagnostics.critical_cone(cfg, grid, st.path, st.tau, st.multiplier, region=run.region,
                                     theta=run.theta, tol=tol)
    rep = diagnostics.soc_check(cfg, grid, st.path, st.tau, st.multiplier, cone, region=run.region,
                                theta=run.theta, seed=run.seed)
    data = rep.to_dict()
    if rep.verdict == diagnostics.POSITIVE:
        data["growth"] = diagnostics.growth_check(cfg, grid, st.path, st.tau, st.multiplier, cone, rep.cone_min,
                                                  region=run.region, theta=run.theta, seed=run.seed + 1)
    data["config"] = run.to_dict()
    _write_json(out / "soc.json", data)
    return EXIT_OK, {"verdict": rep.verdict}


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "grad-check": cmd_grad_check,
    "kkt-check": cmd_kkt_check,
    "soc-check": cmd_soc_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lasopt", description="Laser path and treatment-time optimization.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default="runs", help="base directory for the run directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("simulate", "optimize"):
            group = p.add_mutually_exclusive_group()
            group.add_argument("--path-file", help="CSV with header t,x,y and nt+1 rows")
            group.add_argument("--builtin-path", choices=["constant", "circle", "line"])
        if name == "optimize":
            p.add_argument("--kappa0", type=float)
            p.add_argument("--growth", type=float)
            p.add_argument("--outer", type=int)
            p.add_argument("--tol", type=float, help="inner tolerance at kappa0")
            p.add_argument("--max-inner", type=int)
        if name in ("grad-check", "kkt-check", "soc-check"):
            p.add_argument("--state-dir", help="output directory of an optimize run")
        if name in ("kkt-check", "soc-check"):
            p.add_argument("--tol", type=float, help="residual tolerance (default 10x final inner tolerance)")
    return parser


def _overrides(args) -> dict:
    over = {"seed": args.seed}
    if args.command == "optimize":
        over.update(kappa0=args.kappa0, growth=args.growth, n_outer=args.outer, tol0=args.tol,
                    max_inner=args.max_inner)
    return over


def run_command(args) -> int:
    start = time.time()
    try:
        run = load_config(args.config, _overrides(args))
        out = make_run_dir(args.out, args.command, run.seed)
        code, summary = COMMANDS[args.command](args, run, out)
    except (ConfigError, ShapeError, DomainError) as exc:
        field = getattr(exc, "field", None)
        print(f"config error{f' in {field}' if field else ''}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    manifest = {
        "command": args.command,
        "config_path": str(Path(args.config).resolve()),
        "output_dir": str(out.resolve()),
        "seed": run.seed,
        "argv": getattr(args, "argv", sys.argv[1:]),
        "started": datetime.fromtimestamp(start).isoformat(timespec="seconds"),
        "wall_clock_s": time.time() - start,
        "exit_code": code,
        "summary": summary,
    }
    _write_json(out / "manifest.json", manifest)
    print(out)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else [str(a) for a in argv]
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("LASOPT_THREADS")
    limit = int(threads) if threads and threads.isdigit() and int(threads) > 0 else None
    with threadpool_limits(limits=limit):
        return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
