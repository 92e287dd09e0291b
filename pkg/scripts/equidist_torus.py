"""Refinement study: direction currents on a flat torus against volume targets.

Builds the equal-weight current over all primitive line directions up to
class K for a ladder of K values, pairs each with low trigonometric modes,
and prints how fast the action averages approach the volume averages.

    python3 scripts/equidist_torus.py --stages 2 4 8 --out equidist.csv
"""
import argparse

import numpy as np

from reebflow.equidist import (discrepancy_report, torus_direction_current,
                               torus_test_functions)
from reebflow.metrics import riemannian_torus


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--stages", type=int, nargs="+", default=[2, 4, 8],
                    help="direction classes to sweep")
    ap.add_argument("--out", help="also write the report CSV here")
    args = ap.parse_args()

    m = riemannian_torus(np.eye(2))
    currents = [torus_direction_current(m, k) for k in args.stages]
    fns = torus_test_functions(m)
    rep = discrepancy_report(m, currents, fns)

    print(f"{'current':>8} {'function':>12} {'ratio':>12} "
          f"{'target':>12} {'deviation':>10}")
    for row in rep.rows:
        print(f"{row.current:>8} {row.function:>12} {row.ratio:>12.6f} "
              f"{row.target:>12.6f} {row.deviation:>10.2e}")
    for name, _ in fns:
        devs = [r.deviation for r in rep.rows if r.function == name]
        trend = " > ".join(f"{d:.2e}" for d in devs)
        print(f"  {name}: {trend}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(rep.to_csv())
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
