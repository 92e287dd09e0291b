"""Action averages, volume targets, and the averaging schedule."""
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reebflow.equidist import (Current, EquidistReport, ReportRow,
                               cesaro_schedule, discrepancy_report,
                               equal_weight, pairings, ratio, running_ratio,
                               target, torus_direction_current,
                               torus_test_functions, volume_identity)
from reebflow.errors import EmptyCurrent
from reebflow.orbits import orbit_by_id

TAU = 2.0 * math.pi


# ---------------------------------------------------------------------------
# ratios
# ---------------------------------------------------------------------------

def test_constant_function_gives_one(flat, flat_orbits):
    cur = equal_weight("all", flat_orbits)
    assert abs(ratio(flat, cur, lambda q: 1.0) - 1.0) < 1e-12


def test_single_line_closed_form(flat, flat_orbits):
    # along line(0,1) the first coordinate is frozen at its anchor value
    orb = orbit_by_id(flat_orbits, "line(0,1)")
    cur = equal_weight("one", [orb])
    got = ratio(flat, cur, lambda q: math.cos(TAU * q[0]))
    assert abs(got - math.cos(TAU * orb.q0[0])) < 1e-9


@settings(max_examples=8)
@given(st.lists(st.floats(0.1, 10.0), min_size=3, max_size=3))
def test_weight_scaling_invariance(flat, flat_orbits, ws):
    orbits = tuple(flat_orbits[:3])
    h = orbits[0].metric_hash
    f = lambda q: math.cos(TAU * q[0])
    base = ratio(flat, Current("w", orbits, (1.0, 1.0, 1.0), h), f)
    scaled = ratio(flat, Current("w", orbits,
                                 tuple(3.7 * w for w in ws), h), f)
    mixed = ratio(flat, Current("w", orbits, tuple(ws), h), f)
    assert abs(scaled - mixed) < 1e-9
    assert np.isfinite(base)


def test_ratio_linearity(flat, flat_orbits):
    cur = equal_weight("all", flat_orbits[:5])
    f = lambda q: math.cos(TAU * q[0])
    g = lambda q: math.sin(TAU * q[1])
    combo = lambda q: 2.0 * f(q) - 0.5 * g(q) + 3.0
    lhs = ratio(flat, cur, combo)
    rhs = 2.0 * ratio(flat, cur, f) - 0.5 * ratio(flat, cur, g) + 3.0
    assert abs(lhs - rhs) < 1e-9


def test_current_validation():
    with pytest.raises(EmptyCurrent):
        equal_weight("none", [])
    with pytest.raises(ValueError):
        Current("bad", (), (1.0,), "deadbeef")


def test_current_rejects_foreign_orbits(flat, flat_orbits, diag_orbits):
    with pytest.raises(ValueError):
        Current("mixed", tuple(flat_orbits[:1]) + tuple(diag_orbits[:1]),
                (1.0, 1.0), flat_orbits[0].metric_hash)
    cur = equal_weight("foreign", diag_orbits[:2])
    with pytest.raises(ValueError):
        pairings(flat, cur, [lambda q: 1.0])


def test_nonpositive_weights_rejected(flat_orbits):
    h = flat_orbits[0].metric_hash
    for w in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(ValueError):
            Current("bad", tuple(flat_orbits[:1]), (w,), h)


# ---------------------------------------------------------------------------
# volume targets
# ---------------------------------------------------------------------------

def test_flat_targets_exact(flat):
    assert abs(target(flat, lambda q: 1.0) - 1.0) < 1e-12
    assert abs(target(flat, lambda q: math.cos(TAU * q[0]))) < 1e-12
    f = lambda q: 2.0 + math.sin(TAU * q[1])
    assert abs(target(flat, f) - 2.0) < 1e-11


def test_diag_target_matches_flat_average(diag):
    # constant metric: the volume density cancels from the normalized average
    f = lambda q: 1.0 + 0.25 * math.cos(TAU * q[0])
    assert abs(target(diag, f) - 1.0) < 1e-11


def test_conformal_target_self_consistent(conf):
    f = lambda q: 1.0 + 0.5 * math.cos(TAU * q[0])
    coarse = target(conf, f, n=(96, 96), tol=1e-8)
    fine = target(conf, f, n=(192, 192), tol=1e-10)
    assert abs(coarse - fine) < 1e-9


def test_sphere_target_constant(sphere):
    assert abs(target(sphere, lambda q: 1.0, n=(1024, 64)) - 1.0) < 1e-14


def test_volume_identity_riemannian(flat, conf):
    f = lambda q: 1.0 + 0.5 * math.cos(TAU * q[0]) * math.sin(TAU * q[1])
    for m in (flat, conf):
        chk = volume_identity(m, f, n=(96, 96))
        assert chk.deviation < 1e-9


def test_volume_identity_zero_integral(flat):
    # a zero-mean mode exercises the absolute floor in the deviation scale
    chk = volume_identity(flat, lambda q: math.cos(TAU * q[0]), n=(64, 64))
    assert chk.deviation < 1e-9
    assert abs(chk.surface) < 1e-12


def test_volume_identity_montecarlo_deterministic(drift):
    f = lambda q: 1.0 + 0.3 * math.cos(TAU * q[0])
    a = volume_identity(drift, f, method="montecarlo", mc_samples=200_000,
                        seed=5)
    b = volume_identity(drift, f, method="montecarlo", mc_samples=200_000,
                        seed=5)
    assert a.contact == b.contact
    assert a.deviation == b.deviation
    assert a.deviation < 2e-2


# ---------------------------------------------------------------------------
# averaging schedule
# ---------------------------------------------------------------------------

def test_cesaro_constant_denominators():
    assert cesaro_schedule([1.0] * 5) == [1, 2, 9, 48, 300]


def test_cesaro_rejects_bad_denominators():
    with pytest.raises(ValueError):
        cesaro_schedule([1.0, 0.0])
    with pytest.raises(ValueError):
        cesaro_schedule([1.0, math.inf])


def test_running_ratio_two_stage_bound():
    # the washout inequality is tight for two stages with a unit ratio jump
    ns = cesaro_schedule([1.0, 1.0])
    run = running_ratio([0.0, 1.0], [1.0, 1.0], ns)
    assert abs(run[-1] - 1.0) <= 2.0 / 2.0
    assert run[-1] == pytest.approx(2.0 / 3.0)


@given(st.lists(st.floats(0.2, 0.8), min_size=3, max_size=12))
def test_running_ratio_tracks_stages(ratios):
    # stage ratios within a unit band: running ratio within 2/N of stage N
    B = [1.0 + 0.3 * i for i in range(len(ratios))]
    A = [r * b for r, b in zip(ratios, B)]
    ns = cesaro_schedule(B)
    run = running_ratio(A, B, ns)
    for N in range(1, len(ratios) + 1):
        assert abs(run[N - 1] - ratios[N - 1]) <= 2.0 / N + 1e-12


def test_running_ratio_validation():
    with pytest.raises(ValueError):
        running_ratio([1.0], [1.0, 2.0], [1])
    with pytest.raises(ValueError):
        running_ratio([1.0], [-1.0], [1])
    with pytest.raises(ValueError):
        running_ratio([1.0], [1.0], [0])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_report(flat):
    currents = [torus_direction_current(flat, 1)]
    fs = torus_test_functions(flat)[:3]
    return discrepancy_report(flat, currents, fs)


def test_report_rows_and_targets(small_report):
    assert len(small_report.rows) == 3
    by_fn = {r.function: r for r in small_report.rows}
    assert by_fn["one"].deviation < 1e-10
    assert abs(by_fn["one"].target - 1.0) < 1e-11
    assert abs(by_fn["cos_x"].target) < 1e-11
    for r in small_report.rows:
        assert r.deviation == abs(r.ratio - r.target)


def test_report_csv_deterministic(small_report):
    text = small_report.to_csv()
    assert text == small_report.to_csv()
    assert text.splitlines()[0] == "metric,current,function,ratio,target,deviation"
    assert len(text.splitlines()) == 1 + len(small_report.rows)


def test_report_svg_wellformed(small_report):
    root = ET.fromstring(small_report.to_svg())
    assert root.tag.endswith("svg")


def test_report_row_is_frozen():
    row = ReportRow("c", "f", 1.0, 2.0, 0.5, 0.5, 0.0)
    with pytest.raises(Exception):
        row.ratio = 1.0
    assert EquidistReport is not None
