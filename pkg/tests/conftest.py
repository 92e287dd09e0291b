"""Shared fixtures: one instance of each stock metric per session.

Metric construction is cheap but the orbit catalogs re-integrate the flow
to verify closure, so catalogs are built once and shared.  Tests must not
mutate fixture objects (all public containers are frozen dataclasses or
tuples, so accidental mutation raises).
"""
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from reebflow.charts import cosh_profile, sphere_profile
from reebflow.metrics import (conformal_torus, randers_torus,
                              revolution_metric, riemannian_torus,
                              rotating_sphere_metric)
from reebflow.orbits import catalog_family

settings.register_profile(
    "suite", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def _wavy_exponent(q):
    tau = 2.0 * math.pi
    return 0.15 * math.cos(tau * q[0]) + 0.1 * math.sin(tau * (q[0] + q[1]))


@pytest.fixture(scope="session")
def flat():
    return riemannian_torus(np.eye(2))


@pytest.fixture(scope="session")
def diag():
    return riemannian_torus([[4.0, 0.0], [0.0, 1.0]])


@pytest.fixture(scope="session")
def aniso():
    return riemannian_torus([[2.0, 0.3], [0.3, 1.0]])


@pytest.fixture(scope="session")
def conf():
    return conformal_torus(_wavy_exponent)


@pytest.fixture(scope="session")
def drift():
    return randers_torus(np.eye(2), (0.3, 0.0))


@pytest.fixture(scope="session")
def sphere():
    return revolution_metric(sphere_profile())


@pytest.fixture(scope="session")
def waist():
    return revolution_metric(cosh_profile())


@pytest.fixture(scope="session")
def katok():
    return rotating_sphere_metric(0.3)


@pytest.fixture(scope="session")
def flat_orbits(flat):
    return catalog_family(flat, max_class=2)


@pytest.fixture(scope="session")
def diag_orbits(diag):
    return catalog_family(diag, max_class=2)


@pytest.fixture(scope="session")
def drift_orbits(drift):
    return catalog_family(drift, max_class=1)


@pytest.fixture(scope="session")
def sphere_orbits(sphere):
    return catalog_family(sphere)


@pytest.fixture(scope="session")
def waist_orbits(waist):
    return catalog_family(waist)


@pytest.fixture(scope="session")
def katok_orbits(katok):
    return catalog_family(katok)
