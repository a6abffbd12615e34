"""Remainder of the Lagrangian Hessian form beyond the seminorm term along sin(k pi t / T) directions."""

import argparse
import dataclasses
import math
from pathlib import Path

import numpy as np

from lasopt.config import load_config
from lasopt.model import LaserPath, h1_seminorm_sq
from lasopt.objective import LagrangianHessian


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "desk.json"))
    parser.add_argument("--nt", type=int, default=512)
    parser.add_argument("--kmax", type=int, default=128)
    args = parser.parse_args(argv)
    run = load_config(args.config)
    grid = dataclasses.replace(run.grid, nt=args.nt)
    path = run.start.build(grid)
    H = LagrangianHessian(run.model, grid, path, run.start_tau, None)
    t = grid.times
    print("k,form,remainder")
    k = 1
    while k <= args.kmax:
        d = np.column_stack([np.sin(k * np.pi * t / grid.T_final), np.zeros_like(t)])
        d /= math.sqrt(h1_seminorm_sq(LaserPath(d, grid.T_final)))
        form = H.form(d, d)
        print(f"{k},{form:.10e},{form - run.model.lambda_gamma:.6e}")
        k *= 2


if __name__ == "__main__":
    main()
