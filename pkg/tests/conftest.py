import pytest

from pqlat.kpidata import default_graph, default_profile, generate_dataset


@pytest.fixture(scope="session")
def graph():
    return default_graph(20)


@pytest.fixture(scope="session")
def dense_urban(graph):
    return generate_dataset(default_profile("dense_urban", seed=0), 30, graph)


@pytest.fixture(scope="session")
def small_dataset(graph):
    return generate_dataset(default_profile("dense_urban", seed=1), 3, graph)
