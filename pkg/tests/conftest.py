import numpy as np
import pytest

from navattack.config import ExperimentConfig
from navattack.embedding import ImageTensor, ToyEncoder
from navattack.navgraph import Edge, NavGraph, NavNode
from navattack.scenarios import build_scenario, run_scenario
from navattack.worldgen import make_world


@pytest.fixture(scope="session")
def encoder():
    return ToyEncoder(seed=42)


@pytest.fixture(scope="session")
def small_world():
    return make_world(7, 40, 4)


@pytest.fixture(scope="session")
def world_encoder(small_world):
    return small_world.params.encoder()


@pytest.fixture(scope="session")
def attacked_scenario(small_world, world_encoder):
    rng = np.random.default_rng(3)
    scenario = build_scenario(small_world, world_encoder, rng, landmark_count=3)
    return run_scenario(world_encoder, scenario, ExperimentConfig())


@pytest.fixture
def graph_factory():
    """Build small graphs of 1x1x3 images from (u, v, cost) triples."""

    def build(node_count, edges, values=None):
        values = values if values is not None else [0.7] * node_count
        nodes = [
            NavNode(i, (float(i), 0.0), (ImageTensor.filled(values[i], (1, 1, 3)),
                                         ImageTensor.filled(values[i], (1, 1, 3))))
            for i in range(node_count)
        ]
        return NavGraph(nodes, [Edge(u, v, c) for u, v, c in edges])

    return build


def random_connected_edges(rng, node_count, extra=None, low=0.1, high=2.0):
    """Random spanning tree plus extra random edges, as (u, v, cost) triples."""
    edges = {}
    for v in range(1, node_count):
        u = int(rng.integers(v))
        edges[(u, v)] = float(rng.uniform(low, high))
    extra = extra if extra is not None else int(rng.integers(0, node_count + 1))
    for _ in range(extra):
        u, v = sorted(int(x) for x in rng.choice(node_count, size=2, replace=False)) if node_count > 1 else (0, 0)
        if u != v and (u, v) not in edges:
            edges[(u, v)] = float(rng.uniform(low, high))
    return [(u, v, c) for (u, v), c in sorted(edges.items())]
