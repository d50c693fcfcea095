import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from hcam.graphs import Dag, HDag, Hyperedge, hierarchical_closure

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@st.composite
def dags(draw, min_d=2, max_d=5):
    d = draw(st.integers(min_d, max_d))
    perm = draw(st.permutations(range(d)))
    edges = []
    for a, b in itertools.combinations(range(d), 2):
        if draw(st.booleans()):
            edges.append((perm[a], perm[b]))
    return Dag(d, edges)


@st.composite
def hdags(draw, min_d=2, max_d=5, max_order=3):
    g = draw(dags(min_d, max_d))
    raw = []
    for j in range(g.d):
        pa = sorted(g.parents(j))
        subsets = [s for k in range(1, min(max_order, len(pa)) + 1) for s in itertools.combinations(pa, k)]
        if subsets:
            chosen = draw(st.lists(st.sampled_from(subsets), unique=True, max_size=len(subsets)))
            raw.extend(Hyperedge(s, j) for s in chosen)
    return hierarchical_closure(raw, g.d)


def random_dag(d, rng, p=0.5) -> Dag:
    perm = rng.permutation(d)
    edges = [(int(perm[a]), int(perm[b])) for a, b in itertools.combinations(range(d), 2) if rng.random() < p]
    return Dag(d, edges)


def random_hdag(d, rng, max_order=3, p=0.5) -> HDag:
    g = random_dag(d, rng, p)
    raw = []
    for j in range(d):
        pa = sorted(g.parents(j))
        for k in range(1, min(max_order, len(pa)) + 1):
            for s in itertools.combinations(pa, k):
                if rng.random() < 0.5:
                    raw.append(Hyperedge(s, j))
    return hierarchical_closure(raw, d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
