"""Time-step refinement of the regularity diagnostics at optimized solutions.

Solves the config at each nt and reports endpoint velocities, the H2 proxy
and the limit-ODE residual with observed orders between successive levels.
"""

import argparse
import dataclasses
import math
from pathlib import Path

from lasopt.config import load_config
from lasopt.diagnostics import regularity_check
from lasopt.optimize import penalty_loop
from lasopt.pde import adjoint_solve, forward_solve


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "desk.json"))
    parser.add_argument("--nt", type=int, nargs="+", default=[50, 100, 200])
    args = parser.parse_args(argv)
    base = load_config(args.config)
    print("nt,tau,velocity_start,velocity_end,h2_proxy,ode_residual_max,ode_residual_l2,order_max")
    prev = None
    for nt in args.nt:
        run = dataclasses.replace(base, grid=dataclasses.replace(base.grid, nt=nt))
        rep = penalty_loop(run.model, run.grid, run.schedule, (run.start.build(run.grid), run.start_tau),
                           region=run.region, theta=run.theta)
        state = forward_solve(run.model, run.grid, rep.path, region=run.region)
        adj = adjoint_solve(run.model, run.grid, rep.path, rep.tau, state, region=run.region)
        reg = regularity_check(run.model, run.grid, rep.path, rep.tau, rep.multiplier, adj, region=run.region)
        order = "" if prev is None else f"{math.log(prev[1] / reg.ode_residual_max) / math.log(nt / prev[0]):.3f}"
        print(f"{nt},{rep.tau:.6f},{reg.velocity_start:.3e},{reg.velocity_end:.3e},{reg.h2_proxy:.4f},"
              f"{reg.ode_residual_max:.4e},{reg.ode_residual_l2:.4e},{order}")
        prev = (nt, reg.ode_residual_max)


if __name__ == "__main__":
    main()
