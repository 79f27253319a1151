import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from arrowdebreu.exactnum import PowValue
from arrowdebreu.extraction import (
    ExtractionError,
    LinearSystem,
    SingularSystem,
    _components,
    assemble_system,
    canonicalize,
    solve_exact,
    spanning_forest,
    verify_equilibrium,
)
from arrowdebreu.market import MarketInstance, perturb
from arrowdebreu.oracle import enumerate_equilibrium, is_equilibrium, reference_solve
from arrowdebreu.pipeline import solve

from conftest import random_forest_edges, random_instance

F = Fraction
TWIN_U = [[2, 1], [2, 1]]


# assembling the price equations


def test_twin_market_system():
    sys_ = assemble_system([(0, 0), (0, 1), (1, 1)], TWIN_U, [F(2), F(1)])
    assert sys_.A == ((F(-1), F(2)), (F(0), F(1)))
    assert sys_.X == (0, 1)
    assert sys_.provenance == ("forest", "price-one")
    assert solve_exact(sys_) == [2, 1]


def test_single_agent_system():
    sys_ = assemble_system([(0, 0)], [[3]], [F(1)])
    assert sys_.A == ((1,),) and sys_.X == (1,) and sys_.provenance == ("price-one",)


def test_components_joined_only_by_ownership():
    # b0 buys c1 and b1 buys c0: two equality components, one extended component
    edges = [(0, 1), (1, 0)]
    assert len(_components(edges, 2)) == 2
    assert len(_components(edges, 2, extended=True)) == 1
    sys_ = assemble_system(edges, [[1, 1], [1, 1]], [F(1), F(1)])
    assert len(sys_.A) == 2
    assert sys_.provenance == ("component", "price-one")
    assert solve_exact(sys_) == [1, 1]


def test_spanning_forest_prefers_low_edges():
    assert spanning_forest([(1, 1), (0, 0), (0, 1), (1, 0)], 2) == [(0, 0), (0, 1), (1, 0)]


@pytest.mark.parametrize("seed", range(30))
def test_system_round_trip_on_synthetic_equilibria(seed):
    # prices and bang-per-buck chosen first; tree edges get u = alpha * p
    rng = random.Random(seed)
    n = rng.randint(1, 5)
    tree = []
    while len(tree) != 2 * n - 1:
        tree = random_forest_edges(rng, n, n, keep=1.0)
    p = [rng.randint(1, 6) for _ in range(n)]
    alpha = [rng.randint(1, 4) for _ in range(n)]
    u = [[0] * n for _ in range(n)]
    for i, j in tree:
        u[i][j] = alpha[i] * p[j]
    sol = solve_exact(assemble_system(tree, u, p))
    cheapest = min(range(n), key=lambda j: (p[j], j))
    assert sol == [F(x, p[cheapest]) for x in p]


# exact elimination


def test_identity_system():
    ident = tuple(tuple(F(int(i == j)) for j in range(3)) for i in range(3))
    assert solve_exact(LinearSystem(ident, (F(1),) * 3, ("price-one",) * 3)) == [1, 1, 1]


def test_singular_system():
    A = ((F(1), F(2)), (F(2), F(4)))
    with pytest.raises(SingularSystem):
        solve_exact(LinearSystem(A, (F(1), F(2)), ("forest", "price-one")))
    with pytest.raises(SingularSystem):
        reference_solve(A, (F(1), F(2)))


rationals = st.fractions(min_value=-20, max_value=20, max_denominator=7)


@given(st.lists(st.lists(rationals, min_size=4, max_size=4), min_size=4, max_size=4), st.lists(rationals, min_size=4, max_size=4))
def test_bareiss_matches_gauss_jordan(A, X):
    try:
        ref = reference_solve(A, X)
    except SingularSystem:
        with pytest.raises(SingularSystem):
            solve_exact(LinearSystem(tuple(map(tuple, A)), tuple(X), ("forest",) * 4))
        return
    assert solve_exact(LinearSystem(tuple(map(tuple, A)), tuple(X), ("forest",) * 4)) == ref


# verification


def test_verify_twin_market_prices():
    cert = verify_equilibrium(TWIN_U, [F(2), F(1)])
    assert cert.passed and cert.money_flow(0, 0) > 0
    bad = verify_equilibrium(TWIN_U, [F(1), F(2)])
    assert not bad.passed and not bad.max_bang_per_buck
    assert bad.goods_sold and bad.money_spent


def test_verify_uniform():
    assert verify_equilibrium([[1, 1], [1, 1]], [F(1), F(1)]).passed


def test_verify_rejects_nonpositive_prices():
    with pytest.raises(ValueError):
        verify_equilibrium([[1, 1], [1, 1]], [F(0), F(1)])


def test_certificate_allocation_clears():
    cert = verify_equilibrium(TWIN_U, [F(2), F(1)])
    n = 2
    for j in range(n):
        assert sum(cert.allocation[i][j] for i in range(n)) == 1
    for i in range(n):
        assert sum(cert.allocation[i][j] * cert.prices[j] for j in range(n)) == cert.prices[i]


@pytest.mark.parametrize("seed", range(40))
def test_verify_agrees_with_brute_force(seed):
    rng = random.Random(seed)
    inst = random_instance(rng, rng.randint(2, 3), U=4)
    cands = [tuple(F(rng.randint(1, 4)) for _ in range(inst.n)) for _ in range(20)]
    cands += enumerate_equilibrium(inst)
    for p in cands:
        assert verify_equilibrium(inst, p).passed == is_equilibrium(inst.u, p)


@pytest.mark.parametrize("seed", range(10))
def test_verify_is_scale_invariant(seed):
    rng = random.Random(seed)
    inst = random_instance(rng, 3, U=5)
    for p in enumerate_equilibrium(inst):
        cert = verify_equilibrium(inst, p)
        k = F(rng.randint(1, 9), rng.randint(1, 9))
        scaled = verify_equilibrium(inst, [k * x for x in p])
        assert cert.passed and scaled.passed
        assert scaled.allocation == cert.allocation


def test_verify_fisher_budgets():
    cert = verify_equilibrium([[2, 1], [2, 1]], [F(2), F(1)], budgets=[F(2), F(1)])
    assert cert.passed and cert.money_flow(0, 0) > 0
    assert not verify_equilibrium([[2, 1], [2, 1]], [F(1), F(1)], budgets=[F(2), F(1)]).passed


# canonicalization and end to end


@pytest.mark.parametrize("seed", range(10))
def test_canonicalize_connects_the_extended_graph(seed):
    rng = random.Random(seed)
    inst = random_instance(rng, 4, U=10)
    p = perturb(inst)
    ea = sorted(set(p.e.values()))
    prices = [PowValue(rng.choice(ea), rng.randint(-3, 3)) for _ in range(4)]
    out, edges = canonicalize(p, prices)
    assert len(_components(edges, 4, extended=True)) == 1
    assert all(new >= old for new, old in zip(out, prices))
    cheapest = min(range(4), key=lambda j: (prices[j], j))
    assert out[cheapest] == prices[cheapest]


def test_solve_twin_market():
    out = solve(MarketInstance.from_rows(TWIN_U))
    assert out.certificate.passed
    assert tuple(out.prices) in enumerate_equilibrium(TWIN_U)


def test_solve_uniform_market():
    assert solve(MarketInstance.from_rows([[1, 1], [1, 1]])).prices == (1, 1)


def test_extraction_error_carries_certificate():
    cert = verify_equilibrium(TWIN_U, [F(1), F(2)])
    err = ExtractionError("bad", cert)
    assert err.certificate is cert
