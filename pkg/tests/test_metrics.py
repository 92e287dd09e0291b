"""Norms, Legendre duality, fiber areas, and surface integrals."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reebflow.errors import QuadratureUnderResolved, ZeroVector
from reebflow.metrics import (dual_norm, eval_metric, fiber_area,
                              fiber_area_montecarlo, fundamental_tensor,
                              legendre, legendre_inverse, metric_distance,
                              riemannian_torus, surface_integral)

TAU = 2.0 * math.pi


def spd_matrices():
    """Symmetric positive definite 2x2 matrices with moderate conditioning."""
    return st.builds(
        lambda a, d, t: np.array([[a, t * math.sqrt(a * d)],
                                  [t * math.sqrt(a * d), d]]),
        st.floats(0.5, 3.0), st.floats(0.5, 3.0), st.floats(-0.8, 0.8),
    )


def vectors():
    return st.builds(
        lambda r, t: r * np.array([math.cos(t), math.sin(t)]),
        st.floats(0.1, 3.0), st.floats(0.0, TAU),
    )


points = st.builds(lambda a, b: np.array([a, b]),
                   st.floats(0.0, 1.0), st.floats(0.0, 1.0))


# ---------------------------------------------------------------------------
# Legendre duality
# ---------------------------------------------------------------------------

def test_flat_norm_and_legendre(flat):
    q = np.array([0.2, 0.7])
    v = np.array([3.0, 4.0])
    assert abs(eval_metric(flat, q, v) - 5.0) < 1e-14
    # Euclidean momentum is the vector itself, and |p|_* = F(v)
    p = legendre(flat, q, v)
    assert np.allclose(p, v, atol=1e-14)
    assert abs(dual_norm(flat, q, p) - 5.0) < 1e-14


@given(G=spd_matrices(), q=points, v=vectors())
def test_riemannian_duality_roundtrip(G, q, v):
    m = riemannian_torus(G)
    F = eval_metric(m, q, v)
    p = legendre(m, q, v)
    # Euler identity: the dual pairing of v with its Legendre image is F^2.
    assert abs(float(p @ v) - F * F) <= 1e-10 * F * F
    back = legendre_inverse(m, q, p)
    assert np.linalg.norm(back - v) <= 1e-9 * np.linalg.norm(v)
    # the image lies where the dual norm says it should: |p|_* = F
    assert abs(dual_norm(m, q, p) - F) <= 1e-10 * F


@given(G=spd_matrices(), q=points, v=vectors(), c=st.floats(0.1, 10.0))
def test_homogeneity_and_fundamental_tensor(G, q, v, c):
    m = riemannian_torus(G)
    assert abs(eval_metric(m, q, c * v) - c * eval_metric(m, q, v)) \
        <= 1e-11 * c * eval_metric(m, q, v)
    g = fundamental_tensor(m, q, v)
    assert np.allclose(g, g.T, atol=1e-12)
    # Riemannian fundamental tensor is v-independent and equals G itself
    assert np.allclose(g, G, atol=1e-10)


def test_randers_norm_pins(drift):
    # h = identity, b = (0.3, 0): F(v) = |v| + 0.3 v_x
    q = np.array([0.1, 0.9])
    assert abs(eval_metric(drift, q, np.array([1.0, 0.0])) - 1.3) < 1e-14
    assert abs(eval_metric(drift, q, np.array([-1.0, 0.0])) - 0.7) < 1e-14
    assert abs(eval_metric(drift, q, np.array([0.0, 1.0])) - 1.0) < 1e-14


@given(q=points, v=vectors())
def test_randers_duality_roundtrip(drift, q, v):
    F = eval_metric(drift, q, v)
    p = legendre(drift, q, v)
    assert abs(float(p @ v) - F * F) <= 1e-10 * F * F
    back = legendre_inverse(drift, q, p)
    assert np.linalg.norm(back - v) <= 1e-9 * np.linalg.norm(v)


def test_legendre_rejects_zero_vector(flat):
    with pytest.raises(ZeroVector):
        legendre(flat, np.array([0.0, 0.0]), np.array([0.0, 0.0]))


# ---------------------------------------------------------------------------
# fiber areas
# ---------------------------------------------------------------------------

def test_fiber_area_flat_is_pi(flat):
    q = np.array([0.4, 0.6])
    assert abs(fiber_area(flat, q, method="closed") - math.pi) < 1e-12
    assert abs(fiber_area(flat, q, method="polar") - math.pi) < 1e-10


def test_fiber_area_closed_scaling(diag):
    # dual unit ball of G = diag(4,1) is the ellipse with semi-axes (2,1)
    q = np.array([0.0, 0.0])
    assert abs(fiber_area(diag, q, method="closed") - 2.0 * math.pi) < 1e-12
    assert abs(fiber_area(diag, q, method="polar") - 2.0 * math.pi) < 1e-9


def test_fiber_area_routes_agree(conf, drift, katok):
    probes = [np.array([0.13, 0.71]), np.array([0.52, 0.07])]
    for m in (conf, drift):
        for q in probes:
            closed = fiber_area(m, q, method="closed")
            polar = fiber_area(m, q, method="polar")
            assert abs(polar - closed) <= 1e-9 * closed
    q = np.array([1.2, 0.5])
    closed = fiber_area(katok, q, method="closed")
    polar = fiber_area(katok, q, method="polar")
    assert abs(polar - closed) <= 1e-9 * closed


def test_fiber_area_montecarlo_deterministic(drift):
    q = np.array([0.0, 0.0])
    a1 = fiber_area_montecarlo(drift, q, 200_000, seed=11)
    a2 = fiber_area_montecarlo(drift, q, 200_000, seed=11)
    assert a1 == a2
    exact = fiber_area(drift, q, method="closed")
    assert abs(a1 - exact) <= 2e-2 * exact


# ---------------------------------------------------------------------------
# surface integrals
# ---------------------------------------------------------------------------

def test_surface_integral_flat(flat):
    one = surface_integral(flat, lambda q: 1.0, n=(64, 64))
    assert abs(one - 1.0) < 1e-12
    mode = surface_integral(flat, lambda q: math.cos(TAU * q[0]), n=(64, 64))
    assert abs(mode) < 1e-12
    lebesgue = surface_integral(flat, lambda q: 1.0, n=(64, 64),
                                weight="lebesgue")
    assert abs(lebesgue - 1.0) < 1e-12


def test_surface_integral_constant_density(diag):
    # density sqrt(det G) = 2 on the unit-period torus
    val = surface_integral(diag, lambda q: 1.0, n=(32, 32))
    assert abs(val - 2.0) < 1e-11


def test_surface_integral_routes_agree(conf):
    f = lambda q: 1.0 + 0.5 * math.cos(TAU * q[0])
    a = surface_integral(conf, f, n=(96, 96), fiber_method="closed")
    b = surface_integral(conf, f, n=(96, 96), fiber_method="polar")
    assert abs(a - b) <= 1e-9 * abs(a)


def test_surface_integral_underresolved_raises(sphere):
    # a handful of Simpson nodes cannot resolve this wiggle to 1e-12
    f = lambda q: 1.0 / (1.1 + math.cos(7.0 * q[0]))
    with pytest.raises(QuadratureUnderResolved):
        surface_integral(sphere, f, n=(8, 8), tol=1e-12)


def test_metric_distance_pin(flat, diag):
    # sup |F_diag/F_flat - 1| = 1, attained along the first axis
    assert abs(metric_distance(diag, flat) - 1.0) < 1e-12
    assert metric_distance(flat, flat) == 0.0
