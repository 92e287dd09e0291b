"""Command-line front end: batch runs driven by a TOML config.

Subcommands
    verify                 invariant suite on the configured metric
    flow                   integrate one flow line, emit CSV (optional SVG)
    orbits list|find|classify
    perturb apply|nondegenerify
    equidist               orbit-family averages vs volume targets (CSV/SVG)
    check-lemma31          local-model derivative vs finite-difference oracle
    report                 catalog + classification + equidist bundle

Common flags: --config PATH, --seed N, --threads N, --out-dir DIR, --tol X,
--svg.  Flags override the corresponding [run] keys.  All artifacts embed the
config hash and seed; identical (config, seed) reruns are byte-identical.

Exit codes map error families:
    0 success            4 integration failures (quadrature, step underflow)
    1 check/gate failed  5 orbit search failures
    2 config errors      6 frame/symplectic failures
    3 domain errors      7 perturbation failures
                         8 other package errors
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import (MetricConfig, RunConfig, build_metric, parse_config)
from .equidist import (discrepancy_report, equal_weight,
                       revolution_test_functions, torus_direction_current,
                       torus_test_functions, volume_identity)
from .errors import (ConfigError, DomainError, FrameError, IntegrationError,
                     OrbitError, PerturbationError, ReebflowError,
                     UnknownOrbit, ValidationError)
from .flow import (conjugacy_error, integrate, legendre, legendre_inverse,
                   line_pair, trajectory_to_csv, trajectory_to_svg, unit_state)
from .local_model import lemma31_table
from .metrics import dual_norm, eval_metric, fiber_area
from .orbits import catalog_family, find_closed_orbit
from .perturb import (PerturbationSpec, build_tube, check_orbit_preserved,
                      convexity_margin, nondegenerify, perturbed_metric,
                      perturbed_poincare_map)
from .poincare import classification_record, classify, eigenvalue_margin, poincare_map

_EXIT_FAMILIES = (
    (ConfigError, 2),
    (DomainError, 3),
    (IntegrationError, 4),
    (OrbitError, 5),
    (FrameError, 6),
    (PerturbationError, 7),
    (ReebflowError, 8),
)


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------

def _preamble(rc: RunConfig) -> str:
    return f"# config={rc.config_hash()} seed={rc.seed}\n"


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_json(rc: RunConfig, path: Path, payload: dict) -> None:
    body = {"config_hash": rc.config_hash(), "seed": rc.seed, **payload}
    _write_text(path, json.dumps(body, sort_keys=True, indent=2) + "\n")


def _g17(x: float) -> float:
    return float(format(float(x), ".17g"))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_verify(rc: RunConfig, out: Path) -> int:
    m = build_metric(rc.metric)
    rng = np.random.default_rng(rc.seed)
    chart = m.atlas.chart
    checks: list[dict] = []

    def record(name: str, value: float, gate: float) -> None:
        passed = bool(value < gate)
        checks.append({"check": name, "value": _g17(value), "gate": gate,
                       "passed": passed})
        print(("ok  " if passed else "FAIL") + f" {name}: {value:.3e} < {gate:g}")

    def sample_point() -> np.ndarray:
        q = np.empty(2)
        for axis in range(2):
            if chart.periodic[axis]:
                q[axis] = rng.uniform(0.0, chart.periods[axis])
            else:
                lo, hi = chart.bounds[axis]
                pad = 0.1 * (hi - lo)
                q[axis] = rng.uniform(lo + pad, hi - pad)
        return q

    worst_round = worst_euler = 0.0
    for _ in range(200):
        q = sample_point()
        th = rng.uniform(0.0, 2.0 * math.pi)
        v = np.array([math.cos(th), math.sin(th)]) * rng.uniform(0.2, 3.0)
        F = eval_metric(m, q, v)
        p = legendre(m, q, v)
        worst_euler = max(worst_euler, abs(float(p @ v) - F * F) / (F * F))
        v_back = legendre_inverse(m, q, p)
        worst_round = max(worst_round,
                          float(np.max(np.abs(v_back - v))) / max(1.0, float(np.max(np.abs(v)))),
                          abs(dual_norm(m, q, p) - F) / F)
    record("legendre_roundtrip", worst_round, 1e-9)
    record("euler_identity", worst_euler, 1e-10)

    if getattr(m, "fiber_area_closed", None) is not None:
        worst = 0.0
        for _ in range(9):
            q = sample_point()
            worst = max(worst, abs(fiber_area(m, q)
                                   / fiber_area(m, q, method="closed") - 1.0))
        record("fiber_area_routes", worst, 1e-9)

    try:
        orbits = catalog_family(m, max_class=min(rc.orbits.max_class, 2))
    except OrbitError:
        orbits = []
    if orbits:
        worst_res = max(o.residual for o in orbits)
        record("catalog_residual", worst_res, 1e-8)
        worst_len = 0.0
        for o in orbits[:6]:
            length = float(line_pair(m, o.state, o.period,
                                     [lambda q: 1.0], tol=1e-12)[0])
            worst_len = max(worst_len, abs(length - o.period))
        record("length_equals_period", worst_len, 1e-7)
        for o in orbits[:4]:
            pm = poincare_map(m, o, tol=rc.tol)
            classify(pm.matrix)

    if all(chart.periodic):
        L = chart.periods
        vc = volume_identity(
            m, lambda q: 1.0 + 0.5 * math.cos(2.0 * math.pi * q[0] / L[0]),
            n=(96, 96))
        record("volume_identity", vc.deviation, 1e-8)

    q0 = sample_point()
    v0 = np.array([1.0, 0.7])
    st = unit_state(m, q0, legendre(m, q0, v0 / eval_metric(m, q0, v0)))
    record("flow_conjugacy", conjugacy_error(m, st, 5.0, tol=rc.tol), 1e-6)

    failed = [c["check"] for c in checks if not c["passed"]]
    _write_json(rc, out / "verify.json",
                {"metric": m.describe(), "checks": checks,
                 "failed": failed})
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_flow(rc: RunConfig, out: Path) -> int:
    m = build_metric(rc.metric)
    q0 = np.asarray(rc.flow.q0)
    v0 = np.asarray(rc.flow.v0)
    F = eval_metric(m, q0, v0)
    st = unit_state(m, q0, legendre(m, q0, v0 / F))
    ts = np.linspace(0.0, rc.flow.tmax, 257)[1:-1]
    traj = integrate(m, st, rc.flow.tmax, tol=rc.tol, t_eval=list(ts))
    csv_path = out / "flow.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    trajectory_to_csv(traj, str(csv_path))
    csv_path.write_text(_preamble(rc) + csv_path.read_text())
    arts = ["flow.csv"]
    if rc.svg:
        svg_path = out / "flow.svg"
        wrap = m.atlas.chart.periods if all(m.atlas.chart.periodic) else None
        trajectory_to_svg(traj, str(svg_path), wrap_periods=wrap)
        svg_path.write_text(f"<!-- config={rc.config_hash()} -->\n"
                            + svg_path.read_text())
        arts.append("flow.svg")
    _write_json(rc, out / "flow.json",
                {"metric": m.describe(), "tmax": rc.flow.tmax,
                 "max_drift": _g17(traj.max_drift), "n_steps": traj.n_steps,
                 "artifacts": arts})
    print(f"integrated T={rc.flow.tmax:g}: {traj.n_steps} steps, "
          f"max unit drift {traj.max_drift:.2e}")
    return 0


def _orbit_entries(orbits) -> list[dict]:
    return [{
        "id": o.orbit_id, "period": _g17(o.period),
        "residual": _g17(o.residual), "minimal": o.minimal,
        "displacement": list(o.displacement) if o.displacement else None,
        "q0": [_g17(x) for x in o.q0], "p0": [_g17(x) for x in o.p0],
    } for o in orbits]


def _catalog(m, rc: RunConfig):
    return catalog_family(m, max_class=rc.orbits.max_class)


def _pick_orbit(orbits, wanted: str | None):
    if wanted is None:
        return orbits[0]
    for o in orbits:
        if o.orbit_id == wanted:
            return o
    raise UnknownOrbit(f"no cataloged orbit {wanted!r}; have "
                       f"{[o.orbit_id for o in orbits]}")


def cmd_orbits(rc: RunConfig, action: str, out: Path) -> int:
    m = build_metric(rc.metric)
    if action == "find":
        oc = rc.orbits
        if oc.q0 is None or oc.v0 is None or oc.period is None:
            raise ValidationError(
                "orbits.q0, orbits.v0 and orbits.period are required for find")
        q0 = np.asarray(oc.q0)
        v0 = np.asarray(oc.v0)
        st = unit_state(m, q0, legendre(m, q0, v0 / eval_metric(m, q0, v0)))
        orb = find_closed_orbit(m, st, oc.period, tol=rc.tol,
                                orbit_id=oc.orbit or "found")
        _write_json(rc, out / "orbits.json",
                    {"metric": m.describe(), "orbits": _orbit_entries([orb])})
        print(f"closed orbit {orb.orbit_id}: T={orb.period:.12g} "
              f"residual={orb.residual:.2e}")
        return 0
    orbits = _catalog(m, rc)
    if action == "list":
        _write_json(rc, out / "orbits.json",
                    {"metric": m.describe(), "orbits": _orbit_entries(orbits)})
        for o in orbits:
            print(f"{o.orbit_id}: T={o.period:.12g} residual={o.residual:.2e}")
        return 0
    # classify
    wanted = orbits if rc.orbits.orbit is None else \
        [_pick_orbit(orbits, rc.orbits.orbit)]
    entries = []
    for o in wanted:
        pm = poincare_map(m, o, tol=rc.tol)
        cls = classify(pm.matrix)
        rec = classification_record(pm, cls)
        rec["eigenvalue_margin"] = _g17(eigenvalue_margin(pm.matrix))
        rec["period"] = _g17(o.period)
        entries.append(rec)
        print(f"{o.orbit_id}: {cls.kind} trace={pm.trace:.9g}")
    _write_json(rc, out / "classify.json",
                {"metric": m.describe(), "orbits": entries})
    return 0


_PROFILE_CODES = {"orbit_fixing": "a", "negative_control": "b"}


def cmd_perturb(rc: RunConfig, action: str, out: Path) -> int:
    m = build_metric(rc.metric)
    orbits = _catalog(m, rc)
    pc = rc.perturb
    if action == "nondegenerify":
        result = nondegenerify(m, orbits, budget=pc.budget,
                               margin_target=pc.margin, window=pc.window,
                               radius=pc.radius, tol=rc.tol,
                               threads=rc.threads)
        entries = [{
            "orbit": e.orbit_id, "amplitude": _g17(e.amplitude),
            "peaks": [_g17(x) for x in e.peaks],
            "margin_before": _g17(e.margin_before),
            "margin_after": _g17(e.margin_after),
            "class_after": e.kind_after,
        } for e in result.entries]
        _write_json(rc, out / "nondegenerify.json",
                    {"metric": m.describe(), "budget": pc.budget,
                     "margin_target": pc.margin, "entries": entries})
        for e in entries:
            print(f"{e['orbit']}: s={e['amplitude']} margin "
                  f"{e['margin_before']:.3e} -> {e['margin_after']:.3e} "
                  f"({e['class_after']})")
        return 0
    # apply
    orbit = _pick_orbit(orbits, pc.orbit)
    tube = build_tube(m, orbit, pc.window[0], pc.window[1], radius=pc.radius)
    spec = PerturbationSpec(orbit.orbit_id, _PROFILE_CODES[pc.profile],
                            (1.0, 0.6, 0.35), pc.window, pc.radius, tube)
    pm0 = poincare_map(m, orbit, tol=rc.tol)
    m2 = perturbed_metric(m, spec, pc.amplitude)
    pm1 = perturbed_poincare_map(m2, orbit, tol=rc.tol)
    residual = check_orbit_preserved(m, spec, orbit, pc.amplitude)
    payload = {
        "metric": m.describe(), "orbit": orbit.orbit_id,
        "profile": pc.profile, "amplitude": pc.amplitude,
        "window": list(pc.window), "radius": pc.radius,
        "convexity_margin": _g17(convexity_margin(m2, m2.parts)),
        "flow_residual_on_orbit": _g17(residual),
        "trace_before": _g17(pm0.trace), "trace_after": _g17(pm1.trace),
        "class_before": classify(pm0.matrix).kind,
        "class_after": classify(pm1.matrix).kind,
    }
    _write_json(rc, out / "perturb.json", payload)
    print(f"{orbit.orbit_id} {pc.profile} s={pc.amplitude:g}: trace "
          f"{pm0.trace:.9g} -> {pm1.trace:.9g}, orbit residual {residual:.2e}")
    return 0


def cmd_equidist(rc: RunConfig, out: Path) -> int:
    m = build_metric(rc.metric)
    chart = m.atlas.chart
    if all(chart.periodic):
        currents = [torus_direction_current(m, k) for k in rc.equidist.k_stages]
        fns = torus_test_functions(m)
        n = rc.equidist.target_n
        tol = rc.equidist.target_tol
    else:
        currents = [equal_weight("catalog", catalog_family(m))]
        fns = revolution_test_functions(m)
        n = (max(rc.equidist.target_n[0], 256), min(rc.equidist.target_n[1], 64))
        tol = max(rc.equidist.target_tol, 1e-7)
    rep = discrepancy_report(m, currents, fns, target_n=n, target_tol=tol)
    _write_text(out / "equidist.csv", _preamble(rc) + rep.to_csv())
    arts = ["equidist.csv"]
    if rc.svg:
        _write_text(out / "equidist.svg",
                    f"<!-- config={rc.config_hash()} -->\n" + rep.to_svg())
        arts.append("equidist.svg")
    worst = max(r.deviation for r in rep.rows)
    print(f"{len(rep.rows)} rows over {len(currents)} currents; "
          f"worst |ratio - target| = {worst:.3e}")
    for art in arts:
        print(f"wrote {out / art}")
    return 0


def cmd_check_lemma31(rc: RunConfig, out: Path) -> int:
    rows = lemma31_table(instances=rc.lemma31.instances, seed=rc.seed)
    lines = ["instance_seed,prediction_norm,oracle_norm,relative_error"]
    for seed_i, pn, on, rel in rows:
        lines.append(f"{seed_i},{pn:.17g},{on:.17g},{rel:.17g}")
    _write_text(out / "lemma31.csv", _preamble(rc) + "\n".join(lines) + "\n")
    worst = max(r[3] for r in rows)
    print(f"{len(rows)} instances, max relative error {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def cmd_report(rc: RunConfig, out: Path) -> int:
    code = cmd_orbits(rc, "list", out)
    code = max(code, cmd_orbits(rc, "classify", out))
    code = max(code, cmd_equidist(rc, out))
    return code


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="reebflow",
        description="Geodesic flow toolkit: flows, closed orbits, return maps, "
                    "tube perturbations, and equidistribution diagnostics.",
        epilog="Exit codes: 0 ok, 1 gate failed, 2 config, 3 domain, "
               "4 integration, 5 orbits, 6 frames, 7 perturbation, 8 other.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override [run].seed")
    common.add_argument("--threads", type=int, help="override [run].threads")
    common.add_argument("--out-dir", help="override [run].out_dir")
    common.add_argument("--tol", type=float, help="override [run].tol")
    common.add_argument("--svg", action="store_true", default=None,
                        help="also emit SVG plots")

    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common])
    sub.add_parser("flow", parents=[common])
    p_orb = sub.add_parser("orbits", parents=[common])
    p_orb.add_argument("action", choices=("list", "find", "classify"))
    p_orb.add_argument("--max-class", type=int, help="override [orbits].max_class")
    p_orb.add_argument("--orbit", help="override [orbits].orbit")
    p_pert = sub.add_parser("perturb", parents=[common])
    p_pert.add_argument("action", choices=("apply", "nondegenerify"))
    p_eq = sub.add_parser("equidist", parents=[common])
    p_eq.add_argument("--family", choices=("torus", "sphere", "katok"),
                      help="stock metric instead of [metric]")
    p_eq.add_argument("--K", type=int,
                      help="cap the torus refinement stages at this class")
    p_lem = sub.add_parser("check-lemma31", parents=[common])
    p_lem.add_argument("--instances", type=int, help="override [lemma31].instances")
    sub.add_parser("report", parents=[common])
    return ap


_STOCK = {
    "torus": MetricConfig(family="flat"),
    "sphere": MetricConfig(family="sphere"),
    "katok": MetricConfig(family="rotating_sphere", rho=0.3),
}


def _effective_config(args) -> RunConfig:
    rc = parse_config(args.config) if args.config else RunConfig()
    rc = dataclasses.replace(rc, command=args.command)
    for attr, key in (("seed", "seed"), ("threads", "threads"),
                      ("tol", "tol")):
        v = getattr(args, attr, None)
        if v is not None:
            rc = dataclasses.replace(rc, **{key: v})
    if getattr(args, "out_dir", None) is not None:
        rc = dataclasses.replace(rc, out_dir=args.out_dir)
    if getattr(args, "svg", None):
        rc = dataclasses.replace(rc, svg=True)
    if getattr(args, "max_class", None) is not None:
        rc = dataclasses.replace(
            rc, orbits=dataclasses.replace(rc.orbits, max_class=args.max_class))
    if getattr(args, "orbit", None) is not None:
        rc = dataclasses.replace(
            rc, orbits=dataclasses.replace(rc.orbits, orbit=args.orbit))
    if getattr(args, "instances", None) is not None:
        rc = dataclasses.replace(
            rc, lemma31=dataclasses.replace(rc.lemma31,
                                            instances=args.instances))
    if getattr(args, "family", None) is not None:
        rc = dataclasses.replace(rc, metric=_STOCK[args.family])
    if getattr(args, "K", None) is not None:
        stages = tuple(k for k in rc.equidist.k_stages if k <= args.K) \
            or (args.K,)
        rc = dataclasses.replace(
            rc, equidist=dataclasses.replace(rc.equidist, k_stages=stages))
    if rc.tol <= 0:
        raise ValidationError(f"--tol must be positive, got {rc.tol!r}")
    return rc


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        rc = _effective_config(args)
        out = Path(rc.out_dir)
        if args.command == "verify":
            return cmd_verify(rc, out)
        if args.command == "flow":
            return cmd_flow(rc, out)
        if args.command == "orbits":
            return cmd_orbits(rc, args.action, out)
        if args.command == "perturb":
            return cmd_perturb(rc, args.action, out)
        if args.command == "equidist":
            return cmd_equidist(rc, out)
        if args.command == "check-lemma31":
            return cmd_check_lemma31(rc, out)
        return cmd_report(rc, out)
    except ReebflowError as exc:
        for family, code in _EXIT_FAMILIES:
            if isinstance(exc, family):
                print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
