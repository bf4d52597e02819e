import numpy as np
import pytest

from gnnrec import kernels as K
from gnnrec.graph import BipartiteGraph


@pytest.fixture(params=K.available_backends())
def backend(request):
    """Run the test once per available kernel backend."""
    prev = K.get_backend()
    K.set_backend(request.param)
    yield request.param
    K.set_backend(prev)


@pytest.fixture(autouse=True)
def _reset_counters():
    K.reset_counters()
    yield
    K.reset_counters()


def random_graph(rng, num_users, num_items, num_edges):
    """Random bipartite graph with at least one edge (duplicates collapse)."""
    users = rng.integers(0, num_users, num_edges)
    items = rng.integers(0, num_items, num_edges)
    return BipartiteGraph(num_users, num_items, users, items)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
