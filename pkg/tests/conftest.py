"""Shared fixtures: small meshes, the reference triangle, cheap pipeline runs."""

import numpy as np
import pytest

from crackfem import (
    Chain,
    CrackGraph,
    build_preset,
    build_rectangle_mesh,
    run_single,
)
from crackfem.config import _radial_levels


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)


@pytest.fixture
def ref_triangle():
    return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@pytest.fixture
def square_mesh():
    return build_rectangle_mesh((0.0, 1.0, 0.0, 1.0), 0.5)


@pytest.fixture
def fine_square_mesh():
    return build_rectangle_mesh((0.0, 1.0, 0.0, 1.0), 0.125)


def make_y_crack(permeabilities=(2.0, 3.0, 4.0)):
    """Three straight chains meeting at (0.5, 0.5) inside the unit square."""
    center = [0.5, 0.5]
    tips = ([0.1, 0.9], [0.9, 0.85], [0.45, 0.05])
    chains = [
        Chain(np.array([center, tip]), permeability=p)
        for tip, p in zip(tips, permeabilities)
    ]
    return CrackGraph(chains)


@pytest.fixture
def y_crack():
    return make_y_crack()


@pytest.fixture(scope="session")
def radial_coarse():
    """Coarsest locally refined run of the radial interface problem."""
    config = build_preset("radial-local").with_global_h(_radial_levels()[0])
    return run_single(config)


@pytest.fixture(scope="session")
def network_run():
    return run_single(build_preset("crack-network"))
