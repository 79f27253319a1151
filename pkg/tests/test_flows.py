import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from arrowdebreu.flows import (
    CyclicNetwork,
    EqualityNetwork,
    FlowState,
    InfeasibleFlow,
    balanced_flow,
    balanced_flow_preserving,
    forest_balanced_flow,
    forest_max_flow,
    is_balanced,
    max_flow,
)
from arrowdebreu.oracle import balanced_qp, reference_max_flow

from conftest import random_forest_edges, random_forest_network, random_network

F = Fraction


def net(src, snk, edges):
    return EqualityNetwork.from_rationals(src, snk, edges)


EXAMPLE = net([3, 1], [1, 1], [(0, 0), (0, 1), (1, 0)])
MATCHING = net([1, 1, 1], [1, 1, 1], [(0, 0), (1, 1), (2, 2)])


@st.composite
def networks(draw, max_n=5, forest=False):
    seed = draw(st.integers(0, 2**32 - 1))
    nb = draw(st.integers(1, max_n))
    ng = draw(st.integers(1, max_n))
    rng = random.Random(seed)
    if forest:
        return random_forest_network(rng, nb, ng)
    return random_network(rng, nb, ng, density=draw(st.sampled_from([0.3, 0.5, 0.8])))


# network basics


def test_from_rationals_scales_to_integers():
    n = net([F(1, 2), 3], [F(2, 3), 1], [(0, 0)])
    assert n.scale == 6 * 2
    assert n.source_cap(0) == F(1, 2) and n.sink_cap(0) == F(2, 3)
    assert all(isinstance(c, int) for c in n.source_caps + n.sink_caps)


def test_network_rejects_bad_input():
    with pytest.raises(ValueError):
        EqualityNetwork((1,), (1,), ((0, 1),))
    with pytest.raises(ValueError):
        EqualityNetwork((-1,), (1,), ())


def test_check_feasible():
    FlowState(EXAMPLE, {(0, 0): EXAMPLE.scale}).check_feasible()
    with pytest.raises(InfeasibleFlow):
        FlowState(EXAMPLE, {(1, 1): 1}).check_feasible()
    with pytest.raises(InfeasibleFlow):
        FlowState(EXAMPLE, {(0, 0): 2 * EXAMPLE.scale}).check_feasible()
    with pytest.raises(InfeasibleFlow):
        FlowState(EXAMPLE, {(1, 0): 2 * EXAMPLE.scale}).check_feasible()


# max flow


def test_max_flow_examples():
    assert max_flow(net([2], [1], [(0, 0)])).value == 1
    assert max_flow(EXAMPLE).value == 2
    assert max_flow(net([1, 1], [1, 1], [])).value == 0


def test_max_flow_cut_bound():
    # buyers 0 and 1 only reach good 0, so at most cap(c0) + cap(b2) flows
    n = net([5, 5, 2], [1, 9], [(0, 0), (1, 0), (2, 0), (2, 1)])
    assert max_flow(n).value <= 1 + 2
    assert max_flow(n).value == 3


@given(networks(max_n=6))
def test_max_flow_matches_push_relabel(n):
    f = max_flow(n)
    f.check_feasible()
    assert f.value == reference_max_flow(n)


@given(networks(max_n=6))
def test_max_flow_warm_start(n):
    first = max_flow(n)
    half = FlowState(first.net, {e: v // 2 for e, v in first.flow.items()})
    assert max_flow(n, warm_start=half).value == first.value


# forest max flow


def test_forest_max_flow_examples():
    f = forest_max_flow(net([2], [1], [(0, 0)]))
    assert f.value == 1 and f.buyer_surplus() == [1]
    f = forest_max_flow(net([3], [1, 1], [(0, 0), (0, 1)]))
    assert f.value == 2 and f.buyer_surplus() == [1]


def test_forest_max_flow_rejects_cycles():
    with pytest.raises(CyclicNetwork):
        forest_max_flow(net([1, 1], [1, 1], [(0, 0), (0, 1), (1, 0), (1, 1)]))


@given(networks(max_n=8, forest=True))
def test_forest_max_flow_matches_generic(n):
    f = forest_max_flow(n)
    f.check_feasible()
    assert f.value == max_flow(n).value


# balanced flow


def test_balanced_flow_example():
    b = balanced_flow(EXAMPLE)
    assert b.buyer_surplus() == [1, 1]
    assert b.norm2() == 2
    assert (b.f(0, 0), b.f(0, 1), b.f(1, 0)) == (1, 1, 0)
    assert is_balanced(EXAMPLE, b)


def test_unbalanced_max_flow_is_detected():
    s = EXAMPLE.scale
    bad = FlowState(EXAMPLE, {(1, 0): s, (0, 1): s})
    assert bad.buyer_surplus() == [2, 0]
    assert not is_balanced(EXAMPLE, bad)


def test_is_balanced_requires_max_flow():
    with pytest.raises(ValueError):
        is_balanced(EXAMPLE, FlowState(EXAMPLE, {}))


def test_matching_has_zero_surplus():
    assert balanced_flow(MATCHING).norm2() == 0
    assert forest_balanced_flow(MATCHING, (), None).norm2() == 0
    assert is_balanced(MATCHING, max_flow(MATCHING))


@given(networks(max_n=5))
def test_balanced_flow_is_balanced_and_maximum(n):
    b = balanced_flow(n)
    b.check_feasible()
    assert b.value == max_flow(n).value
    assert is_balanced(n, b)


@given(networks(max_n=5))
def test_balanced_flow_matches_qp(n):
    b = balanced_flow(n)
    qp, _ = balanced_qp(n)
    exact = float(b.norm2()) ** 0.5
    assert abs(qp - exact) <= 1e-6 * (1 + exact)


@given(networks(max_n=5), st.randoms(use_true_random=False))
def test_balanced_surplus_is_permutation_equivariant(n, rnd):
    perm = list(range(n.n))
    rnd.shuffle(perm)  # buyer i becomes buyer perm[i]
    src = [0] * n.n
    for i, c in enumerate(n.source_caps):
        src[perm[i]] = F(c, n.scale)
    other = net(src, [F(c, n.scale) for c in n.sink_caps], [(perm[i], j) for i, j in n.edges])
    r = balanced_flow(n).buyer_surplus()
    r2 = balanced_flow(other).buyer_surplus()
    assert [r2[perm[i]] for i in range(n.n)] == r


@given(networks(max_n=5), st.integers(2, 7))
def test_balanced_surplus_scales_with_capacities(n, k):
    bigger = net([F(c * k, n.scale) for c in n.source_caps], [F(c * k, n.scale) for c in n.sink_caps], n.edges)
    assert balanced_flow(bigger).buyer_surplus() == [k * r for r in balanced_flow(n).buyer_surplus()]


# sold-goods-preserving variants


def test_preserving_with_empty_set_equals_plain():
    start = max_flow(EXAMPLE)
    assert balanced_flow_preserving(EXAMPLE, (), start).buyer_surplus() == balanced_flow(EXAMPLE).buyer_surplus()


def test_preserving_is_idempotent_on_its_output():
    b = balanced_flow(EXAMPLE)
    sold = [j for j, r in enumerate(b.good_surplus_units) if r == 0]
    again = balanced_flow_preserving(EXAMPLE, sold, b)
    assert all(again.good_surplus_units[j] == 0 for j in sold)
    assert again.buyer_surplus() == b.buyer_surplus()


def test_preserving_rejects_start_that_does_not_sell():
    with pytest.raises(InfeasibleFlow):
        balanced_flow_preserving(EXAMPLE, [1], FlowState(EXAMPLE, {}))
    with pytest.raises(InfeasibleFlow):
        forest_balanced_flow(EXAMPLE, [1], None)


# every buyer can pay for the big good c1; plain balancing sends b2's money
# there and leaves c2 unsold
KEEP = net([1, 1, 1], [1, 3, 1], [(0, 0), (0, 1), (1, 1), (2, 1), (2, 2)])


def _min_norm_selling(n, C0):
    return balanced_qp(n, keep_sold=C0)[0] ** 2


def test_preserving_keeps_sold_goods_at_minimal_norm():
    s = KEEP.scale
    start = FlowState(KEEP, {(0, 0): s, (1, 1): s, (2, 2): s})
    plain = balanced_flow(KEEP)
    assert plain.good_surplus()[2] > 0
    out = balanced_flow_preserving(KEEP, [0, 2], start)
    assert out.good_surplus()[0] == 0 and out.good_surplus()[2] == 0
    assert out.value == max_flow(KEEP).value
    assert abs(float(out.norm2()) - _min_norm_selling(KEEP, [0, 2])) < 1e-9
    assert forest_balanced_flow(KEEP, [0, 2], start).buyer_surplus() == out.buyer_surplus()


@pytest.mark.parametrize("seed", range(20))
def test_preserving_matches_constrained_qp(seed):
    rng = random.Random(seed)
    n = random_network(rng, 3, 3, density=0.6)
    start = max_flow(n)
    sold = [j for j, r in enumerate(start.good_surplus_units) if r == 0]
    out = balanced_flow_preserving(n, sold, start)
    out.check_feasible()
    assert all(out.good_surplus_units[j] == 0 for j in sold)
    assert out.value == start.value
    assert abs(float(out.norm2()) - _min_norm_selling(n, sold)) < 1e-6 * (1 + float(out.norm2()))


def test_forest_balanced_chain_example():
    n = net([2, 2], [1, 3], [(0, 0), (0, 1), (1, 1)])
    start = max_flow(n)
    sold = [j for j, r in enumerate(start.good_surplus_units) if r == 0]
    assert forest_balanced_flow(n, sold, start).buyer_surplus() == balanced_flow_preserving(n, sold, start).buyer_surplus()
    assert forest_balanced_flow(n, (), None).buyer_surplus() == [F(0), F(0)]


@given(networks(max_n=8, forest=True), st.randoms(use_true_random=False))
def test_forest_balanced_matches_generic_preserving(n, rnd):
    start = max_flow(n)
    sold = [j for j, r in enumerate(start.good_surplus_units) if r == 0 and rnd.random() < 0.7]
    a = forest_balanced_flow(n, sold, start)
    b = balanced_flow_preserving(n, sold, start)
    a.check_feasible()
    assert a.buyer_surplus() == b.buyer_surplus()
    assert all(a.good_surplus_units[j] == 0 for j in sold)


def test_forest_edges_helper_is_acyclic():
    from arrowdebreu.market import is_forest

    rng = random.Random(3)
    for _ in range(50):
        assert is_forest(random_forest_edges(rng, 5, 4), 5, 4)
