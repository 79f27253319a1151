import random
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arrowdebreu.exactnum import ONE, PowValue, make_config
from arrowdebreu.flows import FlowState, forest_balanced_flow
from arrowdebreu.market import MarketInstance, equality_edges, perturb
from arrowdebreu.solver import (
    PriceState,
    apply_update,
    classify,
    compute_x_eq,
    compute_x_max,
    compute_xhats,
    phase_cap,
    run_part_a,
    select_ell,
)
from arrowdebreu.solver import _network

from conftest import random_instance


# threshold selection


def _brute_ell(r, outflow, gamma):
    """First level, scanning down, whose band just below is idle and owns nothing of Gamma(S)."""
    n = len(r)
    for level in sorted({x for x in r if x > 0}, reverse=True):
        S = {i for i in range(n) if r[i] >= level}
        GS = set().union(*(set(gamma[i]) for i in S))
        band = [j for j in range(n) if Fraction(level) * n / (n + 1) <= r[j] < level]
        if all(outflow[j] == 0 and j not in GS for j in band):
            return level, S, GS
    raise AssertionError("no level qualifies")


def r_at(ell, order, r):
    return r[order[ell]]


def test_select_ell_equal_surpluses():
    ell, order, S, GS = select_ell([5, 5, 5], [0, 0, 0], [[0], [1], [2]])
    assert ell == 0 and S == {0, 1, 2} and GS == {0, 1, 2}


def test_select_ell_two_buyers():
    # band for level 4 is [8/3, 4): buyer 1 at 1 is outside it, so level 4 qualifies
    ell, order, S, GS = select_ell([4, 1], [0, 1], [[0], [1]])
    assert order[ell] == 0 and S == {0} and GS == {0}
    # surplus 3 is inside the band and spends money, so the scan drops to level 3
    ell, order, S, GS = select_ell([4, 3], [0, 1], [[0], [1]])
    assert S == {0, 1} and r_at(ell, order, [4, 3]) == 3
    assert _brute_ell([4, 3], [0, 1], [[0], [1]]) == (3, {0, 1}, {0, 1})


def test_select_ell_rejects_zero_surplus():
    with pytest.raises(ValueError):
        select_ell([0, 0], [1, 1], [[0], [1]])


@st.composite
def threshold_inputs(draw):
    n = draw(st.integers(1, 6))
    r = draw(st.lists(st.integers(0, 40), min_size=n, max_size=n).filter(lambda v: max(v) > 0))
    outflow = draw(st.lists(st.integers(0, 2), min_size=n, max_size=n))
    gamma = draw(st.lists(st.lists(st.integers(0, n - 1), max_size=2), min_size=n, max_size=n))
    return r, outflow, gamma


@given(threshold_inputs())
def test_select_ell_matches_definition(inp):
    r, outflow, gamma = inp
    ell, order, S, GS = select_ell(r, outflow, gamma)
    level, S2, GS2 = _brute_ell(r, outflow, gamma)
    assert r[order[ell]] == level
    assert S == S2 and GS == GS2
    assert sorted(order) == list(range(len(r)))


# buyer types


def test_classify_all_buyers_in_S():
    types, k = classify(frozenset({0, 1, 2}), frozenset({0, 2}), [3, 3, 3])
    assert types == {0: "1", 1: "2", 2: "1"} and k == 2
    assert not any(t in ("3", "4a", "4b") for t in types.values())


def test_classify_type_four_split():
    # rmin(S) = 6 and n = 3, so 4a needs surplus >= 4.5
    types, k = classify(frozenset({0}), frozenset({1}), [6, 1, 5, 4])
    assert types == {0: "2", 1: "3", 2: "4a", 3: "4b"} and k == 0


@given(threshold_inputs())
def test_classify_is_a_partition(inp):
    r, outflow, gamma = inp
    _, _, S, GS = select_ell(r, outflow, gamma)
    types, k = classify(S, GS, r)
    assert set(types) == set(range(len(r)))
    assert set(types.values()) <= {"1", "2", "3", "4a", "4b"}
    assert k == sum(1 for t in types.values() if t == "1")
    for i, t in types.items():
        assert (i in S) == (t in ("1", "2"))
        assert (i in GS) == (t in ("1", "3"))


# x_eq


def test_x_eq_exponent_subtraction():
    rows = [[(0, 4, 1), (1, 1, 0)]]
    assert compute_x_eq({0}, frozenset({0}), rows, [ONE, ONE], [PowValue(4, 1)]) == PowValue(3, 1)


def test_x_eq_without_candidates():
    rows = [[(0, 4, 1), (1, 1, 0)]]
    assert compute_x_eq({0}, frozenset({0, 1}), rows, [ONE, ONE], [PowValue(4, 1)]) is None


@pytest.mark.parametrize("seed", range(10))
def test_x_eq_is_the_first_new_edge(seed):
    rng = random.Random(seed)
    inst = random_instance(rng, 4, U=10, zero_prob=0.2)
    p = perturb(inst)
    prices = [PowValue(rng.randint(0, 3) * p.e[next(iter(p.e))], rng.randint(-5, 5)) for _ in range(4)]
    edges, alphas = equality_edges(p, prices)
    gamma = {i: {j for b, j in edges if b == i} for i in range(4)}
    S = {rng.randrange(4)}
    GS = frozenset(set().union(*(gamma[i] for i in S)))
    x = compute_x_eq(S, GS, p.rows(), prices, alphas)
    if x is None:
        assert all(j in GS for i in S for j, _, _ in p.rows()[i])
        return

    def raised(f):
        return [PowValue(v.a + f.a, v.b + f.b) if j in GS else v for j, v in enumerate(prices)]

    below, _ = equality_edges(p, raised(PowValue(x.a, x.b - 1)))
    at, _ = equality_edges(p, raised(x))
    old = {(i, j) for i, j in edges if i in S}
    assert {(i, j) for i, j in below if i in S} == old
    new = {(i, j) for i, j in at if i in S}
    assert old <= new and any(j not in GS for _, j in new)


# x-hat bounds


def test_xhat_type_two_only():
    assert compute_xhats({0: "2"}, [2], [1]) == (None, None, (2, 1))


def test_xhat_type_two_and_three():
    x23, x24, x2 = compute_xhats({0: "2", 1: "3"}, [3, 1], [1, 0])
    assert Fraction(*x23) == Fraction(4, 3)
    assert x24 is None and Fraction(*x2) == Fraction(3, 2)


def test_xhat_type_two_and_four_b():
    x23, x24, x2 = compute_xhats({0: "2", 1: "4b"}, [3, 1], [1, Fraction(1, 2)])
    assert x23 is None and Fraction(*x24) == Fraction(5, 4)


def test_xhat_needs_a_type_two_buyer():
    assert compute_xhats({0: "1", 1: "3"}, [3, 1], [1, 0]) == (None, None, None)


# x_max


CFG2 = make_config(2, 10)


def _window_ok(g, target, L):
    with mpmath.workdps(200):
        step = mpmath.log1p(mpmath.mpf(1) / L)
        lt = mpmath.log(mpmath.mpf(target.numerator) / target.denominator)
        return lt - 2 * step <= g * step <= lt


def test_x_max_with_type_three():
    x = compute_x_max(True, 0, CFG2)
    assert x.b == 0 and x.a >= 1
    assert _window_ok(x.a, Fraction(2841, 2840), CFG2.L)


def test_x_max_without_type_three():
    x = compute_x_max(False, 1, CFG2)
    assert _window_ok(x.a, 1 + Fraction(1, 355 * 4), CFG2.L)
    assert compute_x_max(False, 2, CFG2).a < x.a
    with pytest.raises(ValueError):
        compute_x_max(False, 0, CFG2)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_x_max_exceeds_one(n):
    cfg = make_config(n, 10)
    for k in range(1, n + 1):
        assert compute_x_max(False, k, cfg) > ONE
    assert compute_x_max(True, 0, cfg) > ONE


# price update


def _start(u):
    inst = MarketInstance.from_rows(u)
    p = perturb(inst)
    cfg = p.cfg
    n = inst.n
    m = 2 if n == 2 else 6
    state = PriceState.initial(n, cfg.L)
    edges, _ = equality_edges(p, state.p)
    net = _network(state, edges, m, cfg.L * m)
    return cfg, state, forest_balanced_flow(net, (), None), m


def test_apply_update_adds_exponents():
    cfg, state, flow, m = _start([[2, 1], [1, 2]])
    x = PowValue(5, -2)
    new, _ = apply_update(x, {1}, state, flow, cfg)
    assert new.p == [ONE, PowValue(5, -2)]
    new2, _ = apply_update(PowValue(1, 1), {0, 1}, new, flow, cfg)
    assert new2.p == [PowValue(1, 1), PowValue(6, -1)]
    assert state.p == [ONE, ONE]


def test_apply_update_scales_everything_when_all_goods_rise():
    cfg, state, flow, m = _start([[2, 1], [1, 2]])
    g = compute_x_max(True, 0, cfg).a
    new, moved = apply_update(PowValue(g, 0), {0, 1}, state, flow, cfg)
    net = _network(new, flow.net.edges, m, flow.net.scale)
    after = FlowState(net, moved)
    after.check_feasible()
    assert after.good_surplus_units == flow.good_surplus_units
    ratio = Fraction(new.phat_num[0], state.phat_num[0])
    assert new.phat_num[0] == new.phat_num[1]
    for r0, r1 in zip(flow.buyer_surplus_units, after.buyer_surplus_units):
        assert r1 == r0 * ratio
    assert ratio == Fraction(cfg.table.approx(g), cfg.L)


def test_apply_update_rejects_exponent_above_K():
    cfg, state, flow, _ = _start([[2, 1], [1, 2]])
    from arrowdebreu.solver import UpdateFailure

    with pytest.raises(UpdateFailure):
        apply_update(PowValue(cfg.K + 1, 0), {0}, state, flow, cfg)


# phase loop


def test_phase_cap():
    # ceil(16 * log2(20)) = ceil(69.15)
    assert phase_cap(2, 10, 1) == 70
    assert phase_cap(1, 1, 1) == 1


def test_single_agent_needs_no_phase():
    res = run_part_a(perturb(MarketInstance.from_rows([[1]])))
    assert res.phases == 0 and res.total_surplus == 0


def test_uniform_market_terminates():
    res = run_part_a(perturb(MarketInstance.from_rows([[1, 1], [1, 1]])))
    assert res.total_surplus < res.pinst.cfg.epsilon / 2


@pytest.mark.parametrize("seed", range(4))
def test_run_part_a_terminates_below_threshold(seed):
    inst = random_instance(random.Random(100 + seed), 2 + seed % 2, zero_prob=0.0)
    plans = []
    res = run_part_a(perturb(inst), on_phase=lambda rec, plan: plans.append((rec, plan)))
    cfg = res.pinst.cfg
    assert 0 < res.phases <= phase_cap(inst.n, inst.U)
    assert res.total_surplus < cfg.epsilon / 2
    for rec, plan in plans:
        cands = [plan.x_max] + ([plan.x_eq] if plan.x_eq is not None else [])
        assert plan.x <= min(cands)
        assert plan.x > ONE
        assert (plan.phase_kind == "xmax") == (plan.x == plan.x_max)
        assert all(plan.types[i] in ("1", "2") for i in plan.S)
        for i, t in plan.types.items():
            assert (t in ("1", "3")) == (i in plan.GammaS)
        assert rec.k == plan.k
    potentials = [rec.potential for rec in res.trace]
    assert potentials == sorted(potentials)
