import os
import random
from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings

from arrowdebreu.market import MarketInstance, validate

settings.register_profile(
    "default",
    max_examples=int(os.environ.get("HYPOTHESIS_MAX_EXAMPLES", "60")),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_instance(rng: random.Random, n: int, U: int = 10, zero_prob: float = 0.3) -> MarketInstance:
    """Valid random market; resamples until the market assumptions hold."""
    while True:
        u = [[0 if rng.random() < zero_prob else rng.randint(1, U) for _ in range(n)] for _ in range(n)]
        inst = MarketInstance.from_rows(u, U=U)
        if validate(inst) is None:
            return inst


def random_caps(rng: random.Random, k: int) -> list[Fraction]:
    return [Fraction(rng.randint(0, 20), rng.randint(1, 4)) for _ in range(k)]


@pytest.fixture
def rng():
    return random.Random(20240611)


def random_network(rng: random.Random, nb: int, ng: int | None = None, density: float = 0.4):
    from arrowdebreu.flows import EqualityNetwork

    ng = nb if ng is None else ng
    edges = [(i, j) for i in range(nb) for j in range(ng) if rng.random() < density]
    return EqualityNetwork.from_rationals(random_caps(rng, nb), random_caps(rng, ng), edges)


def random_forest_edges(rng: random.Random, nb: int, ng: int, keep: float = 0.8) -> list[tuple[int, int]]:
    """A random acyclic buyer/good edge set."""
    parent = list(range(nb + ng))

    def find(v: int) -> int:
        while parent[v] != v:
            v = parent[v]
        return v

    cand = [(i, j) for i in range(nb) for j in range(ng)]
    rng.shuffle(cand)
    out = []
    for i, j in cand:
        a, b = find(i), find(nb + j)
        if a != b and rng.random() < keep:
            parent[a] = b
            out.append((i, j))
    return out


def random_forest_network(rng: random.Random, nb: int, ng: int | None = None):
    from arrowdebreu.flows import EqualityNetwork

    ng = nb if ng is None else ng
    edges = random_forest_edges(rng, nb, ng)
    return EqualityNetwork.from_rationals(random_caps(rng, nb), random_caps(rng, ng), edges)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
