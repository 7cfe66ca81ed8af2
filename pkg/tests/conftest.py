import numpy as np
import pytest

from src.geometry import DistributionProfile, TransversalMode, build_transversal
from src.heat_models import ProblemConfig
from src.meshing import mesh_body
from src.presets import get_preset


@pytest.fixture(scope="session")
def slab_domain():
    return get_preset("slab").build()


@pytest.fixture(scope="session")
def square_domain():
    return get_preset("insulated_square").build()


@pytest.fixture(scope="session")
def slab_mesh(slab_domain):
    return mesh_body(slab_domain, 0.1)


@pytest.fixture(scope="session")
def square_mesh(square_domain):
    return mesh_body(square_domain, 0.1)


@pytest.fixture(scope="session")
def slab_transversal(slab_mesh, slab_domain):
    return build_transversal(slab_domain, TransversalMode.NORMAL_FIELD, slab_mesh.insulated_boundary())


@pytest.fixture(scope="session")
def square_transversal(square_mesh, square_domain):
    return build_transversal(square_domain, TransversalMode.NORMAL_FIELD, square_mesh.insulated_boundary())


@pytest.fixture
def slab_config():
    """Unit conductivity and transfer, unit source, cold wall and ambient"""
    return ProblemConfig.simple(lam=1.0, beta=1.0, m=1.0, f=1.0)


@pytest.fixture
def slab_distribution(slab_transversal):
    return DistributionProfile.uniform(slab_transversal, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
