import numpy as np
import pytest

from eegsparse.headmodel import SphereSpec, generate_sphere_leadfield, normalize_columns


@pytest.fixture(scope="session")
def small_lf():
    """587-source sphere (15 mm grid), raw gain."""
    return generate_sphere_leadfield(SphereSpec(grid_spacing=15.0))


@pytest.fixture(scope="session")
def small_nlf(small_lf):
    return normalize_columns(small_lf)


@pytest.fixture(scope="session")
def sphere_lf():
    """Default 1863-source sphere, raw gain."""
    return generate_sphere_leadfield(SphereSpec())


@pytest.fixture(scope="session")
def sphere_nlf(sphere_lf):
    return normalize_columns(sphere_lf)


@pytest.fixture(scope="session")
def free_lf():
    """Coarse free-orientation sphere (dof=3)."""
    return normalize_columns(generate_sphere_leadfield(SphereSpec(grid_spacing=20.0, electrode_count=32), dof=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
