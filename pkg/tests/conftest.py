"""Shared fixtures: the planar study system, its dataset, and certificates.

Synthesis runs are the expensive part of the suite, so every certificate is
session-scoped and built at most once.
"""
from __future__ import annotations

import numpy as np
import pytest

from hullguard.geometry import build_hull_polytope, extract_extreme_points
from hullguard.harness_cli import ScenarioConfig, load_scenario, make_dataset
from hullguard.policies import precompute_partition_gains
from hullguard.synthesis import (
    synth_data_ce,
    synth_data_minvar,
    synth_model_based,
    synth_open_loop,
)


@pytest.fixture(scope="session")
def scenario2d() -> ScenarioConfig:
    return load_scenario("numeric2d")


@pytest.fixture(scope="session")
def system2d(scenario2d):
    return scenario2d.system


@pytest.fixture(scope="session")
def dataset2d(scenario2d):
    return make_dataset(scenario2d)


@pytest.fixture(scope="session")
def polytope2d(system2d):
    return (system2d.F, system2d.g)


@pytest.fixture(scope="session")
def cert_open_loop(scenario2d, polytope2d):
    return synth_open_loop(scenario2d.system.A, polytope2d, scenario2d.synthesis)


@pytest.fixture(scope="session")
def cert_model(scenario2d, polytope2d):
    return synth_model_based(scenario2d.system.A, scenario2d.system.B,
                             polytope2d, scenario2d.synthesis)


@pytest.fixture(scope="session")
def cert_ce(scenario2d, dataset2d, polytope2d):
    return synth_data_ce(dataset2d, polytope2d, scenario2d.synthesis)


@pytest.fixture(scope="session")
def cert_minvar(scenario2d, dataset2d, polytope2d):
    return synth_data_minvar(dataset2d, polytope2d, scenario2d.synthesis,
                             scenario2d.system.Sigma)


@pytest.fixture(scope="session")
def policy_minvar(cert_minvar):
    points, owners = extract_extreme_points(cert_minvar.P)
    hull = build_hull_polytope(points, owners)
    return precompute_partition_gains(hull, cert_minvar.K,
                                      source_mode=cert_minvar.mode)


@pytest.fixture(scope="session")
def pair_shapes():
    """Two axis-aligned ellipsoids with a closed-form candidate-vertex set.

    The boundary-balance directions are (1, +-1)/sqrt(5), giving the eight
    points (+-4, +-1)/sqrt(5) and (+-1, +-4)/sqrt(5); the inner polytope is
    an octagon of area 9.2.
    """
    return [np.diag([4.0, 1.0]), np.diag([1.0, 4.0])]


@pytest.fixture(scope="session")
def pair_hull(pair_shapes):
    points, owners = extract_extreme_points(pair_shapes)
    return build_hull_polytope(points, owners)
