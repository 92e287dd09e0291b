"""End-to-end acceptance gates, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v`` to get one pass/fail line
per criterion.  Every test enforces both its numeric tolerance and a wall
clock budget; run with ``-s`` for the measured values.
"""
import json
import math
import time

import numpy as np
import pytest

from reebflow.equidist import (cesaro_schedule, discrepancy_report,
                               running_ratio, torus_direction_current,
                               torus_test_functions, volume_identity)
from reebflow.cli import main as cli_main
from reebflow.flow import conjugacy_error, unit_state
from reebflow.local_model import lemma31_table
from reebflow.metrics import (dual_norm, eval_metric, fiber_area_montecarlo,
                              legendre, legendre_inverse)
from reebflow.orbits import (ClosedOrbit, closure_residual, length_via_spray,
                             orbit_by_id)
from reebflow.perturb import (PerturbationSpec, build_tube,
                              check_orbit_preserved, measured_s_derivative,
                              nondegenerify, poincare_s_derivative)
from reebflow.poincare import classify, poincare_map

TAU = 2.0 * math.pi
MC_SEED = 20260815


def _report(name, elapsed, budget, **values):
    parts = " ".join(f"{k}={v:.3e}" for k, v in values.items())
    print(f"\n{name}: PASS {parts} elapsed={elapsed:.1f}s (budget {budget:g}s)")


def test_criterion_01_legendre_duality(flat, aniso, drift, conf):
    t0 = time.perf_counter()
    rng = np.random.default_rng(MC_SEED)
    worst_round = worst_euler = 0.0
    for m in (flat, aniso, drift, conf):
        for _ in range(250):
            q = rng.uniform(0.0, 1.0, 2)
            v = rng.normal(size=2)
            while np.linalg.norm(v) < 0.1:
                v = rng.normal(size=2)
            F = eval_metric(m, q, v)
            p = legendre(m, q, v)
            back = legendre_inverse(m, q, p)
            worst_round = max(worst_round,
                              float(np.linalg.norm(back - v))
                              / float(np.linalg.norm(v)),
                              abs(dual_norm(m, q, p) - F) / F)
            worst_euler = max(worst_euler, abs(float(p @ v) - F * F) / (F * F))
    elapsed = time.perf_counter() - t0
    assert worst_round < 1e-9
    assert worst_euler < 1e-10
    assert elapsed < 10.0
    _report("criterion 01 legendre duality", elapsed, 10,
            roundtrip=worst_round, euler=worst_euler)


def test_criterion_02_length_equals_period(flat, flat_orbits, diag,
                                           diag_orbits, drift, drift_orbits,
                                           sphere, sphere_orbits, katok,
                                           katok_orbits):
    t0 = time.perf_counter()
    picks = [
        (flat, [orbit_by_id(flat_orbits, i)
                for i in ("line(1,0)", "line(0,1)", "line(1,1)", "line(2,1)")]),
        (diag, [orbit_by_id(diag_orbits, "line(1,0)")]),
        (drift, [orbit_by_id(drift_orbits, "line(1,0)"),
                 orbit_by_id(drift_orbits, "line(-1,0)")]),
        (sphere, [max(sphere_orbits, key=lambda o: o.period)]),
        (katok, [orbit_by_id(katok_orbits, "equator+"),
                 orbit_by_id(katok_orbits, "equator-")]),
    ]
    worst = 0.0
    for m, orbits in picks:
        for orb in orbits:
            worst = max(worst, abs(length_via_spray(m, orb) - orb.period))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-7
    assert elapsed < 30.0
    _report("criterion 02 length equals period", elapsed, 30, worst=worst)


def test_criterion_03_volume_identities(flat, conf, drift):
    t0 = time.perf_counter()
    worst_riem = 0.0
    for m in (flat, conf):
        for name, f in torus_test_functions(m):
            chk = volume_identity(m, f, n=(128, 128))
            worst_riem = max(worst_riem, chk.deviation)
    assert worst_riem < 1e-9

    area = fiber_area_montecarlo(drift, np.array([0.37, 0.37]),
                                 200_000_000, seed=MC_SEED)
    worst_mc = 0.0
    for name, f in torus_test_functions(drift):
        chk = volume_identity(drift, f, method="montecarlo", mc_area=area)
        worst_mc = max(worst_mc, chk.deviation)
    elapsed = time.perf_counter() - t0
    assert worst_mc < 1e-4
    assert elapsed < 60.0
    _report("criterion 03 volume identities", elapsed, 60,
            riemannian=worst_riem, randers_mc=worst_mc)


def test_criterion_04_flow_conjugacy(conf, katok):
    t0 = time.perf_counter()
    worst = 0.0
    for m, q0, v0 in ((conf, (0.15, 0.45), (0.8, 0.6)),
                      (katok, (1.1, 0.3), (0.7, -0.5))):
        q = np.asarray(q0)
        v = np.asarray(v0) / eval_metric(m, np.asarray(q0), np.asarray(v0))
        st = unit_state(m, q, legendre(m, q, v))
        worst = max(worst, conjugacy_error(m, st, 10.0, tol=1e-11))
    elapsed = time.perf_counter() - t0
    assert worst < 1e-6
    assert elapsed < 30.0
    _report("criterion 04 flow conjugacy", elapsed, 30, worst=worst)


def test_criterion_05_first_order_prediction():
    t0 = time.perf_counter()
    rows = lemma31_table(20, seed=7)
    worst = max(r[3] for r in rows)
    elapsed = time.perf_counter() - t0
    assert len(rows) >= 20
    assert worst < 1e-4
    assert elapsed < 60.0
    _report("criterion 05 first order prediction", elapsed, 60, worst=worst)


def test_criterion_06_orbit_preserving_profiles(flat, flat_orbits, sphere,
                                                sphere_orbits):
    t0 = time.perf_counter()
    line01 = orbit_by_id(flat_orbits, "line(0,1)")
    tube = build_tube(flat, line01, 0.5, 0.1)
    spec_a = PerturbationSpec("line(0,1)", "a", (1.0, 0.6, 0.35),
                              tube.window, tube.radius, tube)
    spec_b = PerturbationSpec("line(0,1)", "b", (0.3, 0.7, 0.4),
                              tube.window, tube.radius, tube)
    equator = max(sphere_orbits, key=lambda o: o.period)
    stube = build_tube(sphere, equator, 0.5, 0.1)
    sspec_a = PerturbationSpec(equator.orbit_id, "a", (0.9, 0.5, 0.3),
                               stube.window, stube.radius, stube)
    sspec_b = PerturbationSpec(equator.orbit_id, "b", (0.3, 0.7, 0.4),
                               stube.window, stube.radius, stube)
    worst_a = 0.0
    for s in (0.01, 0.05, 0.1):
        worst_a = max(worst_a,
                      check_orbit_preserved(flat, spec_a, line01, s),
                      check_orbit_preserved(sphere, sspec_a, equator, s))
    control = min(check_orbit_preserved(flat, spec_b, line01, 0.05),
                  check_orbit_preserved(sphere, sspec_b, equator, 0.05))
    elapsed = time.perf_counter() - t0
    assert worst_a < 1e-8
    assert control > 1e-4
    assert elapsed < 60.0
    _report("criterion 06 orbit preserving profiles", elapsed, 60,
            fixing=worst_a, control=control)


def test_criterion_07_classification_catalog(flat, flat_orbits, sphere,
                                             sphere_orbits, waist,
                                             waist_orbits, katok,
                                             katok_orbits):
    t0 = time.perf_counter()
    # flat torus: every line is a degenerate parabolic shear
    pm = poincare_map(flat, orbit_by_id(flat_orbits, "line(0,1)"))
    cls = classify(pm.matrix)
    assert cls.kind == "parabolic" and cls.sigma == 1
    assert not cls.nondegenerate

    # round sphere: great circles return the identity (the cataloged
    # equator plus a 45-degree one built from the analytic period)
    equator = max(sphere_orbits, key=lambda o: o.period)
    q0 = np.array([math.pi / 2.0, 0.0])
    v45 = np.array([math.cos(math.pi / 4.0), math.sin(math.pi / 4.0)])
    st = unit_state(sphere, q0, legendre(sphere, q0, v45))
    d, _ = closure_residual(sphere, st, TAU)
    assert d < 1e-8
    tilted = ClosedOrbit("tilted45", sphere.metric_hash(), equator.chart,
                         st.q, st.p, TAU, d)
    ident_dev = 0.0
    for orb in (equator, tilted):
        M = poincare_map(sphere, orb).matrix
        ident_dev = max(ident_dev, float(np.max(np.abs(M - np.eye(2)))))
    assert ident_dev < 1e-6

    # cosh waist: hyperbolic with stretch e^{2 pi} either way around
    wcls = classify(poincare_map(waist, waist_orbits[0]).matrix)
    assert wcls.kind == "hyperbolic"
    stretch_dev = max(abs(wcls.a - math.exp(TAU)) / math.exp(TAU),
                      abs(1.0 / wcls.a - math.exp(-TAU)) / math.exp(-TAU))
    assert stretch_dev < 1e-3

    # rotating sphere at rho = 0.3: the two short orbits and their lengths
    len_dev = 0.0
    for oid, expect in (("equator+", TAU / 1.3), ("equator-", TAU / 0.7)):
        orb = orbit_by_id(katok_orbits, oid)
        len_dev = max(len_dev, abs(orb.period - expect))
        d, _ = closure_residual(katok, orb.state, expect)
        assert d < 1e-8
    elapsed = time.perf_counter() - t0
    assert len_dev < 1e-5
    assert elapsed < 120.0
    _report("criterion 07 classification catalog", elapsed, 120,
            identity=ident_dev, stretch=stretch_dev, lengths=len_dev)


def test_criterion_08_nondegenerify_sphere(sphere, sphere_orbits):
    t0 = time.perf_counter()
    equator = max(sphere_orbits, key=lambda o: o.period)
    res = nondegenerify(sphere, [equator])
    entry = res.entries[0]
    assert entry.amplitude <= 0.1
    assert entry.margin_after >= 1e-4

    stube = build_tube(sphere, equator, 0.5, 0.1)
    sspec = PerturbationSpec(equator.orbit_id, "a", (0.9, 0.5, 0.3),
                             stube.window, stube.radius, stube)
    pred = poincare_s_derivative(sphere, sspec, equator)
    meas = measured_s_derivative(sphere, sspec, equator, ds=0.05)
    rel = float(np.linalg.norm(pred - meas) / np.linalg.norm(meas))
    elapsed = time.perf_counter() - t0
    assert rel < 0.05
    assert elapsed < 120.0
    _report("criterion 08 nondegenerify sphere", elapsed, 120,
            amplitude=entry.amplitude, margin=entry.margin_after,
            prediction_rel=rel)


def test_criterion_09_equidistribution(flat):
    t0 = time.perf_counter()
    currents = [torus_direction_current(flat, k) for k in (2, 4, 8)]
    fns = torus_test_functions(flat)
    rep = discrepancy_report(flat, currents, fns)
    by_fn = {}
    for row in rep.rows:
        by_fn.setdefault(row.function, {})[row.k] = row.deviation
    final_worst = 0.0
    for name, _f in fns:
        devs = by_fn[name]
        assert set(devs) == {2, 4, 8}
        final_worst = max(final_worst, devs[8])
        assert devs[8] < 0.05
        if name != "one":
            assert devs[2] > devs[4] > devs[8]

    # the slow-averaging schedule keeps running ratios glued to stage ratios
    N = 64
    stage_r = [0.5 + 0.3 * math.sin(i / 7.0) for i in range(1, N + 1)]
    B = [1.0 + 0.05 * i for i in range(1, N + 1)]
    A = [r * b for r, b in zip(stage_r, B)]
    ns = cesaro_schedule(B)
    run = running_ratio(A, B, ns)
    cesaro_worst = max(abs(run[i] - stage_r[i]) * (i + 1) / 2.0
                       for i in range(N))
    elapsed = time.perf_counter() - t0
    assert cesaro_worst <= 1.0 + 1e-12
    assert elapsed < 120.0
    _report("criterion 09 equidistribution", elapsed, 120,
            final_worst=final_worst, cesaro_norm=cesaro_worst)


def test_criterion_10_artifact_determinism(tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "run"
    eq_args = ["equidist", "--family", "torus", "--K", "1",
               "--out-dir", str(out)]
    cl_args = ["orbits", "classify", "--max-class", "1",
               "--out-dir", str(out)]
    assert cli_main(eq_args) == 0
    assert cli_main(cl_args) == 0
    csv1 = (out / "equidist.csv").read_bytes()
    json1 = (out / "classify.json").read_bytes()
    assert cli_main(eq_args) == 0
    assert cli_main(cl_args) == 0
    assert (out / "equidist.csv").read_bytes() == csv1
    assert (out / "classify.json").read_bytes() == json1
    parsed = json.loads(json1)
    assert parsed["seed"] == 0
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    _report("criterion 10 artifact determinism", elapsed, 120,
            csv_bytes=float(len(csv1)))
