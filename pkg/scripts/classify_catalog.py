"""Catalog the closed orbits of a stock surface and classify their return maps.

    python3 scripts/classify_catalog.py katok
    python3 scripts/classify_catalog.py torus --max-class 3
"""
import argparse

import numpy as np

from reebflow.charts import cosh_profile, sphere_profile
from reebflow.metrics import (revolution_metric, riemannian_torus,
                              rotating_sphere_metric)
from reebflow.orbits import catalog_family
from reebflow.poincare import classify, eigenvalue_margin, poincare_map


def build(family: str, rho: float):
    if family == "torus":
        return riemannian_torus(np.eye(2))
    if family == "sphere":
        return revolution_metric(sphere_profile())
    if family == "waist":
        return revolution_metric(cosh_profile())
    return rotating_sphere_metric(rho)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("family", choices=("torus", "sphere", "waist", "katok"))
    ap.add_argument("--max-class", type=int, default=2,
                    help="direction cutoff for torus catalogs")
    ap.add_argument("--rho", type=float, default=0.3,
                    help="rotation speed for the katok family")
    args = ap.parse_args()

    m = build(args.family, args.rho)
    orbits = catalog_family(m, max_class=args.max_class) \
        if args.family == "torus" else catalog_family(m)
    print(f"{len(orbits)} closed orbits of {m.describe()}")
    for orb in orbits:
        pm = poincare_map(m, orb)
        cls = classify(pm.matrix)
        extra = f" param={cls.parameter():.6g}" if cls.kind != "parabolic" \
            else f" sigma={cls.sigma} b={cls.b}"
        print(f"{orb.orbit_id:>14}: T={orb.period:.9g} {cls.kind}{extra} "
              f"margin={eigenvalue_margin(pm.matrix):.3e} "
              f"nondeg={cls.nondegenerate}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
