#!/usr/bin/env python3
"""Degeneracy-margin sweep around the tangent two-bus operating point.

Shifts one load component over a symmetric grid of deltas, re-solves the
nearest feasible point for each, and tabulates the smallest singular value
of the active constraint stack. The margin is zero only at delta = 0.

Usage:
    python scripts/sweep_tangency.py --alpha 1 --direction 1 \
        --deltas 1e-3 1e-2 1e-1 --out tangency.csv
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import opfdiag as od


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--alpha", type=float, default=1.0)
    parser.add_argument("--direction", type=int, default=1,
                        help="index into the stacked (p, q) load vector")
    parser.add_argument("--deltas", type=float, nargs="+",
                        default=[1e-3, 1e-2, 1e-1])
    parser.add_argument("--out", default="tangency.csv")
    args = parser.parse_args()

    fix = od.example1(args.alpha)
    grid = sorted({0.0, *args.deltas, *(-d for d in args.deltas)})
    rows = od.tangency_escape_probe(fix.case, fix.ground_truth, grid,
                                    direction=args.direction)

    print(f"{'delta':>12}  {'converged':>9}  {'licq':>5}  {'sigma_min':>12}")
    for row in rows:
        sigma = "-" if row.sigma_min is None else f"{row.sigma_min:.6e}"
        licq = "-" if row.licq_holds is None else str(row.licq_holds)
        print(f"{row.delta:>12.4g}  {str(row.converged):>9}  {licq:>5}  "
              f"{sigma:>12}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["delta", "converged", "licq_holds", "sigma_min",
                         "bound_pinned"])
        for row in rows:
            writer.writerow([row.delta, int(row.converged),
                             "" if row.licq_holds is None
                             else int(row.licq_holds),
                             "" if row.sigma_min is None
                             else repr(row.sigma_min),
                             int(row.bound_pinned)])
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
