"""Tubular windows and orbit-fixing metric perturbations."""
import math

import numpy as np
import pytest

from reebflow.errors import (ConvexityLost, OutsideWindow, SelfIntersection,
                             WindowTooWide)
from reebflow.orbits import catalog_family, orbit_by_id
from reebflow.perturb import (ConstantQuadratic, PerturbationSpec,
                              PerturbedMetric, build_tube,
                              check_orbit_preserved, convexity_bound,
                              convexity_margin, h_derivatives,
                              h_derivatives_fd, nondegenerify,
                              perturbed_metric, spec_from_dict, spec_to_dict)


@pytest.fixture(scope="module")
def line01(flat_orbits):
    return orbit_by_id(flat_orbits, "line(0,1)")


@pytest.fixture(scope="module")
def tube(flat, line01):
    return build_tube(flat, line01, 0.5, 0.1)


@pytest.fixture(scope="module")
def spec_a(tube):
    return PerturbationSpec("line(0,1)", "a", (1.0, 0.6, 0.35), tube.window,
                            tube.radius, tube)


@pytest.fixture(scope="module")
def equator(sphere_orbits):
    return max(sphere_orbits, key=lambda o: o.period)


@pytest.fixture(scope="module")
def stube(sphere, equator):
    return build_tube(sphere, equator, 0.5, 0.1)


@pytest.fixture(scope="module")
def sspec_a(equator, stube):
    return PerturbationSpec(equator.orbit_id, "a", (0.9, 0.5, 0.3),
                            stube.window, stube.radius, stube)


# ---------------------------------------------------------------------------
# tube geometry
# ---------------------------------------------------------------------------

def test_tube_point_locate_roundtrip(flat, line01, tube):
    q = tube.point(0.07, 0.37)
    expect = flat.atlas.chart.wrap(line01.q0 + np.array([0.07, 0.37 * line01.period]))
    assert np.allclose(q, expect, atol=1e-12)
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        t1 = rng.uniform(-0.14, 0.14)
        tau = rng.uniform(0.0, 1.0)
        loc = tube.locate(tube.point(t1, tau))
        assert loc is not None
        worst = max(worst, abs(loc[0] - t1),
                    abs((loc[1] - tau + 0.5) % 1.0 - 0.5))
    assert worst < 1e-10
    outside = flat.atlas.chart.wrap(line01.q0 + np.array([0.3, 0.1]))
    assert tube.locate(outside) is None


def test_tube_guards(flat, line01, flat_orbits):
    with pytest.raises(WindowTooWide):
        build_tube(flat, line01, 0.5, 0.55)
    line21 = orbit_by_id(flat_orbits, "line(2,1)")
    # strands sit 1/sqrt(5) ~ 0.447 apart: radius 0.30 fits, 0.45 collides
    build_tube(flat, line21, 0.5, 0.1, radius=0.30)
    with pytest.raises(SelfIntersection):
        build_tube(flat, line21, 0.5, 0.1, radius=0.45)


def test_katok_tube_normal_orthogonal(katok, katok_orbits):
    keq = orbit_by_id(katok_orbits, "equator+")
    ktube = build_tube(katok, keq, 0.5, 0.1)
    worst = 0.0
    for tau in np.linspace(0.0, 1.0, 97):
        c, dc = ktube.center(tau)
        nu, _ = ktube.normal(tau)
        h = katok.coeffs(katok.atlas.chart.wrap(c))[0]
        ip = float(nu @ h @ dc) / math.sqrt(float(nu @ h @ nu)
                                            * float(dc @ h @ dc))
        worst = max(worst, abs(ip))
    assert worst < 1e-8


# ---------------------------------------------------------------------------
# the perturbed co-metric
# ---------------------------------------------------------------------------

def test_zero_amplitude_is_exactly_base(flat, spec_a):
    pm0 = PerturbedMetric(flat, [(spec_a, 0.0)])
    rng = np.random.default_rng(1)
    for _ in range(20):
        q = rng.uniform(0.0, 1.0, 2)
        p = rng.normal(size=2)
        b = flat.dual_full(q, p)
        z = pm0.dual_full(q, p)
        assert b[0] == z[0]
        assert np.all(b[1] == z[1])
        assert np.all(b[2] == z[2])


def test_constant_matrix_pin(flat):
    c = 0.8
    const = ConstantQuadratic(np.diag([c, 0.0]))
    for s in (0.1, 0.5, 1.0):
        pmc = PerturbedMetric(flat, [(const, s)])
        got = pmc.dual_value(np.array([0.3, 0.4]), np.array([1.0, 0.0]))
        assert abs(got - math.sqrt(1.0 + s * c)) < 1e-14


def test_defining_formula_and_conformal_factor(flat, tube, spec_a):
    pm = PerturbedMetric(flat, [(spec_a, 0.05)])
    rng = np.random.default_rng(7)
    worst_def = worst_exp = 0.0
    for _ in range(200):
        q = tube.point(rng.uniform(-0.15, 0.15), rng.uniform(0.4, 0.6))
        p = rng.normal(size=2)
        S = spec_a.smatrix(flat, q)
        lhs = pm.dual_value(q, p) ** 2
        rhs = flat.dual_value(q, p) ** 2 + 0.05 * float(p @ S @ p)
        worst_def = max(worst_def, abs(lhs - rhs) / max(1.0, abs(rhs)))
        # on the base unit level the perturbation acts as a conformal factor
        pu = p / flat.dual_value(q, p)
        fs = -0.5 * math.log1p(0.05 * float(pu @ S @ pu))
        worst_exp = max(worst_exp, abs(math.exp(fs) * pm.dual_value(q, pu) - 1.0))
    assert worst_def < 1e-12
    assert worst_exp < 1e-12


def test_outside_tube_untouched(flat, line01, spec_a):
    pm = PerturbedMetric(flat, [(spec_a, 0.05)])
    qo = flat.atlas.chart.wrap(line01.q0 + np.array([0.4, 0.3]))
    v = np.array([0.7, -0.2])
    assert pm.dual_value(qo, v) == flat.dual_value(qo, v)


def test_riemannian_base_stays_riemannian(sphere, stube, sspec_a):
    pms = perturbed_metric(sphere, sspec_a, 0.05, check_convexity=False)
    qin = stube.point(0.05, 0.5)
    f1 = pms.fundamental(qin, np.array([1.0, 0.2]))
    f2 = pms.fundamental(qin, np.array([-0.3, 1.1]))
    assert np.array_equal(f1, f2)
    rng = np.random.default_rng(2)
    for _ in range(10):
        v = rng.normal(size=2)
        assert abs(pms.F(qin, v) - pms.F(qin, -v)) < 1e-10


# ---------------------------------------------------------------------------
# convexity control
# ---------------------------------------------------------------------------

def test_convexity_margin_and_bound(flat, spec_a):
    assert convexity_margin(flat, [(spec_a, 0.05)], n=32) > 0.5
    neg = ConstantQuadratic(np.diag([-1.0, 0.0]))
    assert abs(convexity_margin(flat, [(neg, 0.5)], n=16) - 0.5) < 1e-12
    with pytest.raises(ConvexityLost):
        perturbed_metric(flat, neg, 1.2)
    assert abs(convexity_bound(flat, neg, s_hi=2.0, iters=40) - 1.0) < 1e-9


# ---------------------------------------------------------------------------
# transverse derivatives along the orbit
# ---------------------------------------------------------------------------

def test_h_derivatives_flat_pins(flat, tube, spec_a):
    only_a1 = PerturbationSpec("line(0,1)", "a", (1.0, 0.0, 0.0), tube.window,
                               tube.radius, tube)
    g, H = h_derivatives(flat, only_a1, 0.5)
    assert np.allclose(g, 0.0, atol=1e-15)
    assert np.allclose(H, [[-1.0, 0.0], [0.0, 0.0]], atol=1e-14)

    g, H = h_derivatives(flat, spec_a, 0.53)
    chi = spec_a.coeffs(0.53)[0] / spec_a.peaks[0]
    assert np.allclose(H, np.array([[-1.0, -0.6], [-0.6, -0.35]]) * chi,
                       atol=1e-12)
    gf, Hf = h_derivatives_fd(flat, spec_a, 0.53)
    assert np.max(np.abs(g - gf)) < 1e-6
    assert np.max(np.abs(H - Hf)) < 1e-6


def test_h_derivatives_b_profile(flat, tube):
    spec_b = PerturbationSpec("line(0,1)", "b", (0.3, 0.7, 0.4), tube.window,
                              tube.radius, tube)
    g, H = h_derivatives(flat, spec_b, 0.5)
    # at the window center the gradient is the rotated coefficient pair
    assert np.allclose(g, [0.4, -0.7], atol=1e-12)
    gf, Hf = h_derivatives_fd(flat, spec_b, 0.5)
    assert np.max(np.abs(g - gf)) < 1e-6
    assert np.max(np.abs(H - Hf)) < 1e-6


def test_h_derivatives_curved_base(sphere, stube, sspec_a, equator):
    sspec_b = PerturbationSpec(equator.orbit_id, "b", (0.3, 0.7, 0.4),
                               stube.window, stube.radius, stube)
    for sp in (sspec_a, sspec_b):
        g, H = h_derivatives(sphere, sp, 0.55)
        gf, Hf = h_derivatives_fd(sphere, sp, 0.55)
        assert max(np.max(np.abs(g - gf)), np.max(np.abs(H - Hf))) < 1e-6


def test_h_derivatives_outside_window(flat, spec_a):
    with pytest.raises(OutsideWindow):
        h_derivatives(flat, spec_a, 0.75)


# ---------------------------------------------------------------------------
# orbit preservation
# ---------------------------------------------------------------------------

def test_a_profile_keeps_orbit(flat, line01, spec_a):
    assert check_orbit_preserved(flat, spec_a, line01, 0.0) == line01.residual
    assert check_orbit_preserved(flat, spec_a, line01, 0.05) < 1e-8


def test_b_profile_moves_orbit(flat, line01, tube):
    spec_b = PerturbationSpec("line(0,1)", "b", (0.3, 0.7, 0.4), tube.window,
                              tube.radius, tube)
    assert check_orbit_preserved(flat, spec_b, line01, 0.05) > 1e-4


# ---------------------------------------------------------------------------
# nondegenerify bookkeeping
# ---------------------------------------------------------------------------

def test_nondegenerate_orbit_left_alone(waist, waist_orbits):
    res = nondegenerify(waist, [waist_orbits[0]])
    entry = res.entries[0]
    assert entry.amplitude == 0.0
    assert res.metric.metric_hash() == waist.metric_hash() or not res.metric.parts


def test_spec_dict_roundtrip(sphere, equator, sspec_a):
    d = spec_to_dict(sspec_a, 0.05)
    spec2, s2 = spec_from_dict(sphere, equator, d)
    m1 = PerturbedMetric(sphere, [(sspec_a, 0.05)])
    m2 = PerturbedMetric(sphere, [(spec2, s2)])
    assert m1.metric_hash() == m2.metric_hash()
