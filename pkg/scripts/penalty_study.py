"""Penalty sweep on a config: violation, penalty integral and multiplier norm per kappa.

Prints a table and the fitted decay exponents of the penalty integral and of kappa * penalty.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from lasopt.config import load_config
from lasopt.optimize import penalty_loop


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "pull.json"))
    parser.add_argument("--kappa0", type=float, default=1e2)
    parser.add_argument("--outer", type=int, default=3)
    parser.add_argument("--csv", help="optional output CSV")
    args = parser.parse_args(argv)
    run = load_config(args.config, {"kappa0": args.kappa0, "n_outer": args.outer})
    report = penalty_loop(run.model, run.grid, run.schedule, (run.start.build(run.grid), run.start_tau),
                          region=run.region, theta=run.theta)
    rows = [(r.kappa, r.max_violation, r.penalty, r.kappa * r.penalty, r.lambda_l2, r.cost) for r in report.records]
    header = ("kappa", "max_violation", "penalty", "kappa_penalty", "lambda_l2", "cost")
    writer = csv.writer(open(args.csv, "w", newline="") if args.csv else sys.stdout)
    writer.writerow(header)
    writer.writerows(rows)
    k = np.log([r[0] for r in rows])
    print(f"# penalty exponent {-np.polyfit(k, np.log([r[2] for r in rows]), 1)[0]:.3f}", file=sys.stderr)
    print(f"# kappa*penalty exponent {-np.polyfit(k, np.log([r[3] for r in rows]), 1)[0]:.3f}", file=sys.stderr)
    print(f"# violation exponent {-np.polyfit(k, np.log([r[1] for r in rows]), 1)[0]:.3f}", file=sys.stderr)


if __name__ == "__main__":
    main()
