import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from treeot.tree import build_tree

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIGURE_LABELS = ("animal", "mammal", "reptile", "dog", "cat", "lizard", "snake")
FIGURE_EDGES = [(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (1, 4, 1.0), (2, 5, 1.0), (2, 6, 1.0)]


@pytest.fixture
def animal_tree():
    return build_tree(FIGURE_EDGES, root=0, labels=FIGURE_LABELS)


def random_weighted_tree(rng, L, max_weight=5.0, zero_prob=0.0):
    """Random recursive tree with a shuffled labelling and weights in [0, max_weight]."""
    ids = rng.permutation(L)
    edges = []
    for k in range(1, L):
        p = ids[rng.integers(0, k)]
        w = 0.0 if rng.random() < zero_prob else float(rng.uniform(0.0, max_weight))
        edges.append((int(p), int(ids[k]), w))
    return build_tree(edges, root=int(ids[0]), node_count=L)


def random_distribution(rng, L, sparse=False):
    if sparse:
        k = int(rng.integers(1, max(2, L // 3) + 1))
        mu = np.zeros(L)
        mu[rng.choice(L, size=min(k, L), replace=False)] = rng.random(min(k, L)) + 1e-3
    else:
        mu = rng.random(L)
    return mu / mu.sum()


@st.composite
def trees(draw, min_nodes=1, max_nodes=40, max_weight=5.0):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    L = draw(st.integers(min_nodes, max_nodes))
    rng = np.random.default_rng(seed)
    return random_weighted_tree(rng, L, max_weight=max_weight, zero_prob=0.1)


@st.composite
def tree_and_distributions(draw, count=2, min_nodes=1, max_nodes=40):
    tree = draw(trees(min_nodes=min_nodes, max_nodes=max_nodes))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    dists = [random_distribution(rng, tree.node_count, sparse=bool(rng.integers(0, 2)))
             for _ in range(count)]
    return (tree, *dists)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
