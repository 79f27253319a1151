"""The price-raising phase loop.

Every phase picks a set ``S`` of high-surplus buyers, multiplies the prices of
the goods they can buy (``Gamma(S)``) by a common factor ``x`` and rebalances
the flow.  Prices are exact :class:`PowValue` exponent pairs, capacities are
their denominator-``L`` approximations, and all surpluses and flows are
integers in units of ``1/(L * lcm(1..n))``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .exactnum import ONE, PowValue, SolverConfig
from .flows import EqualityNetwork, FlowState, InfeasibleFlow, forest_balanced_flow
from .market import PerturbedInstance, equality_edges, is_forest

__all__ = [
    "SolverError",
    "PhaseCapExceeded",
    "InvariantViolation",
    "UpdateFailure",
    "PriceState",
    "PhasePlan",
    "PhaseTrace",
    "PartAResult",
    "select_ell",
    "classify",
    "compute_x_eq",
    "compute_xhats",
    "compute_x_max",
    "apply_update",
    "run_part_a",
    "phase_cap",
]

log = logging.getLogger(__name__)

Ratio = tuple[int, int]  # (num, den) with den > 0


class SolverError(RuntimeError):
    """Part A could not finish."""


class PhaseCapExceeded(SolverError):
    pass


class UpdateFailure(SolverError):
    """The rescaled flow is infeasible after a price update."""


class InvariantViolation(SolverError):
    def __init__(self, phase: int, name: str, detail: str = ""):
        super().__init__(f"phase {phase}: invariant '{name}' violated {detail}".rstrip())
        self.phase = phase
        self.name = name
        self.detail = detail


@dataclass
class PriceState:
    """Exact prices ``p`` and their approximations ``phat = phat_num / L``."""

    p: list[PowValue]
    phat_num: list[int]
    L: int
    phat_cache: dict[int, int] = field(default_factory=dict, repr=False)

    @classmethod
    def initial(cls, n: int, L: int) -> PriceState:
        return cls([ONE] * n, [L] * n, L, {0: L})

    @property
    def phat(self) -> list[Fraction]:
        return [Fraction(v, self.L) for v in self.phat_num]


@dataclass
class PhasePlan:
    """Everything decided in one phase before prices move."""

    order: list[int]
    ell: int
    S: frozenset[int]
    GammaS: frozenset[int]
    types: dict[int, str]
    k: int
    x_eq: PowValue | None
    x_max: PowValue
    x23hat: Fraction | None
    x24hat: Fraction | None
    x2hat: Fraction | None
    x: PowValue
    phase_kind: str


@dataclass(frozen=True)
class PhaseTrace:
    index: int
    phase_kind: str
    type3: bool
    k: int
    x: PowValue
    potential: int
    norm2_units: int
    surplus_units: int
    scale: int

    @property
    def norm2(self) -> Fraction:
        return Fraction(self.norm2_units, self.scale * self.scale)

    @property
    def total_surplus(self) -> Fraction:
        return Fraction(self.surplus_units, self.scale)


@dataclass
class PartAResult:
    pinst: PerturbedInstance
    prices: PriceState
    flow: FlowState
    edges: list[tuple[int, int]]
    trace: list[PhaseTrace]

    @property
    def phases(self) -> int:
        return len(self.trace)

    @property
    def total_surplus(self) -> Fraction:
        return sum(self.flow.buyer_surplus(), Fraction(0))


def phase_cap(n: int, U: int, multiplier: float = 10**6) -> int:
    return max(1, math.ceil(multiplier * n**4 * math.log2(max(n * U, 2))))


def select_ell(
    r: Sequence[int], outflow: Sequence[int], gamma: Sequence[Iterable[int]]
) -> tuple[int, list[int], frozenset[int], frozenset[int]]:
    """Choose the surplus threshold.

    Buyers are scanned in decreasing order of surplus.  A threshold ``r_l``
    qualifies when no buyer just below it (surplus in ``[r_l/(1+1/n), r_l)``)
    spends money or owns a good of ``Gamma(S)``.  Returns
    ``(ell, order, S, Gamma(S))`` with ``ell`` a position in ``order``.
    """
    n = len(r)
    order = sorted(range(n), key=lambda i: (-r[i], i))
    if r[order[0]] <= 0:
        raise ValueError("no buyer has positive surplus")
    S: set[int] = set()
    GS: set[int] = set()
    pos = 0
    while pos < n:
        level = r[order[pos]]
        if level <= 0:
            break
        start = pos
        while pos < n and r[order[pos]] == level:
            S.add(order[pos])
            GS.update(gamma[order[pos]])
            pos += 1
        ok = True
        for q in range(pos, n):
            j = order[q]
            if r[j] * (n + 1) < level * n:
                break
            if outflow[j] != 0 or j in GS:
                ok = False
                break
        if ok:
            return start, order, frozenset(S), frozenset(GS)
    raise AssertionError("threshold scan ended without a positive level")


def classify(
    S: frozenset[int], GammaS: frozenset[int], r: Sequence[int]
) -> tuple[dict[int, str], int]:
    """Buyer types: 1 (in S, owns a good of Gamma(S)), 2 (in S, does not), 3 (outside, does), 4a/4b."""
    n = len(r)
    rmin = min(r[i] for i in S)
    types: dict[int, str] = {}
    for i in range(n):
        if i in S:
            types[i] = "1" if i in GammaS else "2"
        elif i in GammaS:
            types[i] = "3"
        else:
            types[i] = "4a" if r[i] * (n + 1) >= rmin * n else "4b"
    k = sum(1 for t in types.values() if t == "1")
    return types, k


def compute_x_eq(
    S: Iterable[int],
    GammaS: frozenset[int],
    rows: Sequence[Sequence[tuple[int, int, int]]],
    prices: Sequence[PowValue],
    alphas: Sequence[PowValue],
) -> PowValue | None:
    """Smallest factor at which some buyer of ``S`` gains an equality edge out of ``Gamma(S)``.

    ``None`` stands for infinity (no candidate edge exists).
    """
    best: tuple[int, int] | None = None
    for i in S:
        aa, ab = alphas[i]
        for j, e, l in rows[i]:
            if j in GammaS:
                continue
            pa, pb = prices[j]
            cand = (aa - e + pa, ab - l + pb)
            if best is None or cand < best:
                best = cand
    return None if best is None else PowValue(*best)


def _ratio_less(x: Ratio, y: Ratio | None) -> bool:
    return y is None or x[0] * y[1] < y[0] * x[1]


def compute_xhats(
    types: dict[int, str], caps: Sequence[int], r: Sequence[int]
) -> tuple[Ratio | None, Ratio | None, Ratio | None]:
    """``(x23hat, x24hat, x2hat)`` as ``(num, den)`` pairs, ``None`` for an empty minimum.

    ``caps`` and ``r`` share one unit, so ratios are unit-free.
    """
    t2 = [i for i, t in types.items() if t == "2" and caps[i] != r[i]]
    if not t2:
        return None, None, None
    t3 = [j for j, t in types.items() if t == "3"]
    t4b = [j for j, t in types.items() if t == "4b"]
    x23 = x24 = x2 = None
    for i in t2:
        ci, ri = caps[i], r[i]
        cand = (ci, ci - ri)
        if _ratio_less(cand, x2):
            x2 = cand
        for j in t3:
            cand = (ci + caps[j] - r[j], ci + caps[j] - ri)
            if _ratio_less(cand, x23):
                x23 = cand
        for j in t4b:
            cand = (ci - r[j], ci - ri)
            if _ratio_less(cand, x24):
                x24 = cand
    return x23, x24, x2


def _frac(x: Ratio | None) -> Fraction | None:
    return None if x is None else Fraction(x[0], x[1])


def compute_x_max(type3_present: bool, k: int, cfg: SolverConfig) -> PowValue:
    """Largest certified power of ``1+1/L`` not above the step cap for this phase."""
    return PowValue(_x_max_exponent(type3_present, k, cfg), 0)


def _x_max_target(type3_present: bool, k: int, cfg: SolverConfig) -> Fraction:
    n = cfg.n
    if type3_present:
        return 1 + 1 / (cfg.C * n**3)
    if k < 1:
        raise ValueError("a phase without type 3 buyers has a type 1 buyer")
    return 1 + 1 / (cfg.C * k * n**2)


def _x_max_exponent(type3_present: bool, k: int, cfg: SolverConfig) -> int:
    target = _x_max_target(type3_present, k, cfg)
    g = cfg.table.floor_exponent(target.numerator, target.denominator)
    if g < 1:
        raise ValueError("L too small for the step cap")
    return g


def apply_update(
    x: PowValue,
    GammaS: Iterable[int],
    state: PriceState,
    flow: FlowState,
    cfg: SolverConfig,
) -> tuple[PriceState, dict[tuple[int, int], int | Fraction]]:
    """Raise the prices of ``Gamma(S)`` by ``x`` and rescale the flow into those goods.

    Returns the new price state and the rescaled flow (same units as ``flow``);
    each good of ``Gamma(S)`` keeps its surplus exactly.
    """
    table = cfg.table
    p = list(state.p)
    phat = list(state.phat_num)
    cache = state.phat_cache
    factor: dict[int, tuple[int, int]] = {}
    for j in GammaS:
        a = p[j].a + x.a
        if a < 0 or a > cfg.K:
            raise UpdateFailure(f"price exponent {a} of good {j} outside [0, K]")
        p[j] = PowValue(a, p[j].b + x.b)
        new = cache.get(a)
        if new is None:
            new = table.approx(a)
            cache[a] = new
        if new != phat[j]:
            factor[j] = (new, phat[j])
        phat[j] = new
    flows: dict[tuple[int, int], int | Fraction] = {}
    for (i, j), v in flow.flow.items():
        fj = factor.get(j)
        if fj is None:
            flows[(i, j)] = v
        else:
            q = Fraction(v * fj[0], fj[1])
            flows[(i, j)] = q.numerator if q.denominator == 1 else q
    return PriceState(p, phat, state.L, cache), flows


def run_part_a(
    pinst: PerturbedInstance,
    *,
    phase_cap_multiplier: float = 10**6,
    check_invariants: bool = True,
    on_phase: Callable[[PhaseTrace, PhasePlan], None] | None = None,
) -> PartAResult:
    """Raise prices until the total surplus drops below ``epsilon/2``."""
    cfg = pinst.cfg
    n = pinst.n
    L = cfg.L
    m = math.lcm(*range(1, n + 1)) if n > 1 else 1
    scale = L * m
    eps = cfg.epsilon
    rows = pinst.rows()
    cap = phase_cap(n, pinst.base.U, phase_cap_multiplier)
    xmax_cache: dict[tuple[bool, int], int] = {}

    state = PriceState.initial(n, L)
    edges, alphas = equality_edges(pinst, state.p)
    net = _network(state, edges, m, scale)
    flow = forest_balanced_flow(net, (), None)
    trace: list[PhaseTrace] = []

    def done(f: FlowState) -> bool:
        total = sum(f.buyer_surplus_units)
        return 2 * total * eps.denominator < eps.numerator * scale

    while not done(flow):
        index = len(trace)
        if index >= cap:
            raise PhaseCapExceeded(f"phase cap {cap} reached with surplus {sum(flow.buyer_surplus())}")
        r = flow.buyer_surplus_units
        out = flow.outflow
        gamma: list[list[int]] = [[] for _ in range(n)]
        for i, j in edges:
            gamma[i].append(j)
        ell, order, S, GS = select_ell(r, out, gamma)
        types, k = classify(S, GS, r)
        type3 = any(t == "3" for t in types.values())
        if not type3 and k < 1:
            raise InvariantViolation(index, "type 1 buyer exists without type 3 buyers")
        key = (type3, k if not type3 else 0)
        g_max = xmax_cache.get(key)
        if g_max is None:
            g_max = _x_max_exponent(type3, k, cfg)
            xmax_cache[key] = g_max
        x_max = PowValue(g_max, 0)
        x_eq = compute_x_eq(S, GS, rows, state.p, alphas)
        caps = [v * m for v in state.phat_num]
        x23, x24, x2 = compute_xhats(types, caps, r)
        x = x_max
        kind = "xmax"
        if x_eq is not None and x_eq < x:
            x, kind = x_eq, "balancing"
        xhat = None
        for cand in (x23, x24, x2):
            if cand is not None and _ratio_less(cand, xhat):
                xhat = cand
        if xhat is not None:
            g_hat = _rounded_xhat(xhat, cfg)
            if g_hat is not None and PowValue(g_hat, 0) < x:
                x, kind = PowValue(g_hat, 0), "balancing"
        if x <= ONE:
            raise InvariantViolation(index, "step factor exceeds one", f"x={x}")

        new_state, moved = apply_update(x, GS, state, flow, cfg)
        new_edges, new_alphas = equality_edges(pinst, new_state.p)
        new_net = _network(new_state, new_edges, m, scale)
        start = FlowState(new_net, moved)
        sold = [j for j in range(n) if flow.good_surplus_units[j] == 0]
        try:
            new_flow = forest_balanced_flow(new_net, sold, start)
        except InfeasibleFlow as exc:
            raise UpdateFailure(f"phase {index}: {exc}") from exc

        if check_invariants:
            _check_phase(index, kind, flow, start, new_flow, sold, new_state, new_edges, r, S, k, GS, n, m, cfg)

        sum_a = sum(v.a for v in new_state.p)
        record = PhaseTrace(
            index=index,
            phase_kind=kind,
            type3=type3,
            k=k,
            x=x,
            potential=sum_a,
            norm2_units=sum(v * v for v in new_flow.buyer_surplus_units),
            surplus_units=sum(new_flow.buyer_surplus_units),
            scale=scale,
        )
        trace.append(record)
        if on_phase is not None:
            plan = PhasePlan(
                order=order,
                ell=ell,
                S=S,
                GammaS=GS,
                types=types,
                k=k,
                x_eq=x_eq,
                x_max=x_max,
                x23hat=_frac(x23),
                x24hat=_frac(x24),
                x2hat=_frac(x2),
                x=x,
                phase_kind=kind,
            )
            on_phase(record, plan)
        state, edges, alphas, flow = new_state, new_edges, new_alphas, new_flow
        if index % 10000 == 9999:
            log.debug("phase %d, total surplus %s", index + 1, float(sum(flow.buyer_surplus())))

    return PartAResult(pinst, state, flow, edges, trace)


def _rounded_xhat(xhat: Ratio, cfg: SolverConfig) -> int | None:
    """Exponent for an x-hat bound, rounded down two extra steps.

    Rounding down keeps the rescaled flow feasible despite the errors of the
    new price approximations; nearest rounding could overshoot ``x2hat`` and
    overdraw a type 2 buyer.
    """
    num, den = xhat
    g = cfg.table.floor_exponent(num, den) - 2
    if g < 1:
        raise SolverError("x-hat bound is too close to one for the price grid")
    return g


def _network(state: PriceState, edges: Sequence[tuple[int, int]], m: int, scale: int) -> EqualityNetwork:
    caps = tuple(v * m for v in state.phat_num)
    return EqualityNetwork(caps, caps, tuple(edges), scale)


def _check_phase(
    index: int,
    kind: str,
    before: FlowState,
    moved: FlowState,
    after: FlowState,
    sold: Sequence[int],
    state: PriceState,
    edges: Sequence[tuple[int, int]],
    r: Sequence[int],
    S: frozenset[int],
    k: int,
    GS: frozenset[int],
    n: int,
    m: int,
    cfg: SolverConfig,
) -> None:
    if moved.good_surplus_units != before.good_surplus_units:
        raise InvariantViolation(index, "good surpluses unchanged by the price update")
    for j in sold:
        if after.good_surplus_units[j] != 0:
            raise InvariantViolation(index, "sold goods stay sold", f"good {j}")
    for j, rg in enumerate(after.good_surplus_units):
        if rg > 0 and state.p[j].a != 0:
            raise InvariantViolation(index, "unsold goods keep price one", f"good {j}")
    if any(v.a > cfg.K for v in state.p):
        raise InvariantViolation(index, "price exponents at most K")
    if not is_forest(edges, n):
        raise InvariantViolation(index, "equality graph is a forest")
    slack = 4 * n * m
    if sum(after.buyer_surplus_units) > sum(before.buyer_surplus_units) + slack:
        raise InvariantViolation(index, "total surplus does not increase")
    if kind == "balancing":
        if sum(v * v for v in after.buyer_surplus_units) >= sum(v * v for v in before.buyer_surplus_units):
            raise InvariantViolation(index, "2-norm decreases in balancing phases")
    r_max = max(r)
    if r_max != max(r[i] for i in S):
        raise InvariantViolation(index, "largest surplus lies in S")
    r_min = min(r[i] for i in S)
    h = min(2 * len(GS), n)
    if r_max * n**h > r_min * (n + 1) ** h + 8 * n * m * n**h:
        raise InvariantViolation(index, "surplus spread within S")
