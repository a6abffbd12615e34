"""Forward-solve convergence of the final state in time and in space against fine references."""

import argparse
import dataclasses
import math
from pathlib import Path

import numpy as np

from lasopt.config import load_config
from lasopt.model import LaserPath
from lasopt.pde import forward_solve


def _circle(run, grid):
    c = run.region.center
    return LaserPath.circle(c, 0.5 * run.region.radius, grid.nt, grid.T_final)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "desk.json"))
    parser.add_argument("--nt", type=int, nargs="+", default=[40, 80, 160])
    parser.add_argument("--nt-ref", type=int, default=2560)
    parser.add_argument("--nt-space", type=int, default=20)
    args = parser.parse_args(argv)
    run = load_config(args.config)

    def final_state(grid):
        return forward_solve(run.model, grid, _circle(run, grid), theta=run.theta).values[-1]

    ref_grid = dataclasses.replace(run.grid, nt=args.nt_ref)
    ref = final_state(ref_grid)
    W = ref_grid.volume_weights
    print("kind,level,error,order")
    prev = None
    for nt in args.nt:
        e = final_state(dataclasses.replace(run.grid, nt=nt)) - ref
        err = math.sqrt(float(e @ (W * e)))
        order = "" if prev is None else f"{math.log2(prev / err):.3f}"
        print(f"time,{nt},{err:.4e},{order}")
        prev = err

    # nested levels: 4k+1 nodes per side and 2k+1 through the depth
    levels = [1, 2, 4, 8]
    finals = {}
    for k in levels:
        grid = dataclasses.replace(run.grid, nx=4 * k + 1, ny=4 * k + 1, nz=2 * k + 1, nt=args.nt_space)
        finals[k] = (grid, final_state(grid))
    ref_grid, ref = finals[levels[-1]]
    ref = ref.reshape(ref_grid.shape)
    prev = None
    for k in levels[:-1]:
        grid, y = finals[k]
        s = levels[-1] // k
        e = y - ref[::s, ::s, ::s].ravel()
        err = math.sqrt(float(e @ (grid.volume_weights * e)))
        order = "" if prev is None else f"{math.log2(prev / err):.3f}"
        print(f"space,{grid.nx},{err:.4e},{order}")
        prev = err

if __name__ == "__main__":
    main()
