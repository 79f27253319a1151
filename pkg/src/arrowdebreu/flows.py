"""Maximum and balanced flows in equality networks.

An equality network has a source edge ``s -> b_i`` with capacity ``p_i`` per
buyer, an uncapacitated edge ``b_i -> c_j`` per equality edge, and a sink edge
``c_j -> t`` with capacity ``p_j`` per good.  Capacities are stored as integers
in units of ``1/scale``; balanced flows need exact division of surplus among
up to ``n`` buyers, so networks are rescaled to make every capacity a multiple
of ``lcm(1..n)`` before balancing.  Flow values are ``int`` (or ``Fraction``
for rescaled start flows) in the same units.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm
from typing import Callable, Iterable, Mapping, Sequence, Union

__all__ = [
    "EqualityNetwork",
    "FlowState",
    "InfeasibleFlow",
    "CyclicNetwork",
    "max_flow",
    "forest_max_flow",
    "balanced_flow",
    "balanced_flow_preserving",
    "forest_balanced_flow",
    "is_balanced",
]

Number = Union[int, Fraction]
Edge = tuple[int, int]


class InfeasibleFlow(ValueError):
    """A supplied or derived flow violates capacities or required sales."""


class CyclicNetwork(ValueError):
    """A forest routine received an edge set containing a cycle."""


def _lcm_upto(n: int) -> int:
    return lcm(*range(1, n + 1)) if n > 1 else 1


@dataclass(frozen=True)
class EqualityNetwork:
    """Bipartite flow network in integer units of ``1/scale``."""

    source_caps: tuple[int, ...]
    sink_caps: tuple[int, ...]
    edges: tuple[Edge, ...]
    scale: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", tuple(sorted(set(self.edges))))
        nb, ng = len(self.source_caps), len(self.sink_caps)
        for i, j in self.edges:
            if not (0 <= i < nb and 0 <= j < ng):
                raise ValueError(f"edge {(i, j)} outside the network")
        if any(c < 0 for c in self.source_caps) or any(c < 0 for c in self.sink_caps):
            raise ValueError("negative capacity")
        if self.scale < 1:
            raise ValueError("scale must be positive")

    @classmethod
    def from_rationals(
        cls, source: Sequence[Number], sink: Sequence[Number], edges: Iterable[Edge]
    ) -> EqualityNetwork:
        """Network for rational capacities, scaled so that balancing divides exactly."""
        caps = [Fraction(x) for x in list(source) + list(sink)]
        den = lcm(*(c.denominator for c in caps)) if caps else 1
        scale = den * _lcm_upto(len(source))
        src = tuple(int(Fraction(x) * scale) for x in source)
        snk = tuple(int(Fraction(x) * scale) for x in sink)
        return cls(src, snk, tuple(edges), scale)

    @property
    def n(self) -> int:
        return len(self.source_caps)

    @property
    def n_goods(self) -> int:
        return len(self.sink_caps)

    def source_cap(self, i: int) -> Fraction:
        return Fraction(self.source_caps[i], self.scale)

    def sink_cap(self, j: int) -> Fraction:
        return Fraction(self.sink_caps[j], self.scale)

    def rescaled(self, factor: int) -> EqualityNetwork:
        return EqualityNetwork(
            tuple(c * factor for c in self.source_caps),
            tuple(c * factor for c in self.sink_caps),
            self.edges,
            self.scale * factor,
        )

    def balance_ready(self) -> EqualityNetwork:
        """This network, rescaled if needed so capacities are multiples of ``lcm(1..n)``."""
        m = _lcm_upto(self.n)
        if all(c % m == 0 for c in self.source_caps) and all(c % m == 0 for c in self.sink_caps):
            return self
        return self.rescaled(m)


@dataclass
class FlowState:
    """Buyer-to-good flows in ``net``; source and sink edge flows are implied."""

    net: EqualityNetwork
    flow: dict[Edge, Number] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.flow = {e: v for e, v in self.flow.items() if v != 0}
        nb, ng = self.net.n, self.net.n_goods
        out: list[Number] = [0] * nb
        inn: list[Number] = [0] * ng
        for (i, j), v in self.flow.items():
            out[i] += v
            inn[j] += v
        self.outflow = out
        self.inflow = inn
        self.buyer_surplus_units = [c - o for c, o in zip(self.net.source_caps, out)]
        self.good_surplus_units = [c - o for c, o in zip(self.net.sink_caps, inn)]

    @property
    def value_units(self) -> Number:
        return sum(self.outflow)

    @property
    def value(self) -> Fraction:
        return Fraction(self.value_units) / self.net.scale

    def f(self, i: int, j: int) -> Fraction:
        return Fraction(self.flow.get((i, j), 0)) / self.net.scale

    def buyer_surplus(self) -> list[Fraction]:
        return [Fraction(r) / self.net.scale for r in self.buyer_surplus_units]

    def good_surplus(self) -> list[Fraction]:
        return [Fraction(r) / self.net.scale for r in self.good_surplus_units]

    def norm2(self) -> Fraction:
        """Squared 2-norm of the buyer surplus vector."""
        s = self.net.scale
        return Fraction(sum(r * r for r in self.buyer_surplus_units)) / (s * s)

    def check_feasible(self) -> None:
        edges = set(self.net.edges)
        for e, v in self.flow.items():
            if e not in edges:
                raise InfeasibleFlow(f"flow on non-network edge {e}")
            if v < 0:
                raise InfeasibleFlow(f"negative flow on edge {e}")
        if any(r < 0 for r in self.buyer_surplus_units):
            raise InfeasibleFlow("source capacity exceeded")
        if any(r < 0 for r in self.good_surplus_units):
            raise InfeasibleFlow("sink capacity exceeded")

    def in_network(self, net: EqualityNetwork) -> FlowState:
        """The same flow expressed in ``net``'s units (``net`` must share capacities)."""
        if net.scale == self.net.scale:
            return FlowState(net, dict(self.flow))
        ratio = Fraction(net.scale, self.net.scale)
        return FlowState(net, {e: _norm(v * ratio) for e, v in self.flow.items()})


def _norm(v: Number) -> Number:
    if isinstance(v, Fraction) and v.denominator == 1:
        return v.numerator
    return v


# generic augmenting-path max flow on an explicit arc list

_INF = None


def _edmonds_karp(
    num_nodes: int,
    arcs: Sequence[tuple[int, int, Number | None]],
    s: int,
    t: int,
    flow: list[Number],
) -> None:
    """Augment ``flow`` (per arc, in place) to a maximum flow by shortest paths."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(num_nodes)]
    for k, (a, b, _c) in enumerate(arcs):
        adj[a].append((k, 1))
        adj[b].append((k, -1))
    while True:
        pred: list[tuple[int, int] | None] = [None] * num_nodes
        seen = [False] * num_nodes
        seen[s] = True
        queue = deque([s])
        while queue and not seen[t]:
            v = queue.popleft()
            for k, d in adj[v]:
                a, b, c = arcs[k]
                if d == 1:
                    w = b
                    if seen[w] or (c is not None and flow[k] >= c):
                        continue
                else:
                    w = a
                    if seen[w] or flow[k] <= 0:
                        continue
                seen[w] = True
                pred[w] = (k, d)
                queue.append(w)
        if not seen[t]:
            return
        bottleneck: Number | None = None
        v = t
        while v != s:
            k, d = pred[v]  # type: ignore[misc]
            a, b, c = arcs[k]
            room = (None if c is None else c - flow[k]) if d == 1 else flow[k]
            if room is not None and (bottleneck is None or room < bottleneck):
                bottleneck = room
            v = a if d == 1 else b
        if bottleneck is None:
            raise ValueError("unbounded flow")
        v = t
        while v != s:
            k, d = pred[v]  # type: ignore[misc]
            a, b, _c = arcs[k]
            flow[k] += bottleneck if d == 1 else -bottleneck
            v = a if d == 1 else b


def _bipartite_arcs(
    src: Sequence[Number], snk: Sequence[Number], edges: Sequence[Edge]
) -> tuple[int, list[tuple[int, int, Number | None]], int, int]:
    nb, ng = len(src), len(snk)
    s, t = 0, nb + ng + 1
    arcs: list[tuple[int, int, Number | None]] = []
    for i, c in enumerate(src):
        arcs.append((s, 1 + i, c))
    for j, c in enumerate(snk):
        arcs.append((1 + nb + j, t, c))
    for i, j in edges:
        arcs.append((1 + i, 1 + nb + j, _INF))
    return nb + ng + 2, arcs, s, t


def max_flow(net: EqualityNetwork, warm_start: FlowState | None = None) -> FlowState:
    """Maximum flow by shortest augmenting paths, optionally from a feasible start."""
    nb, ng = net.n, net.n_goods
    num_nodes, arcs, s, t = _bipartite_arcs(net.source_caps, net.sink_caps, net.edges)
    flow: list[Number] = [0] * len(arcs)
    if warm_start is not None:
        start = warm_start if warm_start.net is net else warm_start.in_network(net)
        start.check_feasible()
        for i in range(nb):
            flow[i] = start.outflow[i]
        for j in range(ng):
            flow[nb + j] = start.inflow[j]
        for k, e in enumerate(net.edges):
            flow[nb + ng + k] = start.flow.get(e, 0)
    _edmonds_karp(num_nodes, arcs, s, t, flow)
    return FlowState(net, {e: _norm(flow[nb + ng + k]) for k, e in enumerate(net.edges)})


def forest_max_flow(net: EqualityNetwork) -> FlowState:
    """Maximum flow on an acyclic edge set by repeatedly saturating a leaf edge."""
    flows = _forest_peel(list(net.source_caps), list(net.sink_caps), net.edges, net.n)
    return FlowState(net, flows)


def _forest_peel(src: list[Number], snk: list[Number], edges: Iterable[Edge], nb: int) -> dict[Edge, Number]:
    """Leaf peeling; ``src``/``snk`` are consumed as residual capacities.

    Vertices are buyers ``0..nb-1`` and goods ``nb + j``; the lowest-index
    degree-one vertex is peeled first.
    """
    adj: dict[int, set[int]] = {}
    for i, j in edges:
        adj.setdefault(i, set()).add(nb + j)
        adj.setdefault(nb + j, set()).add(i)
    remaining = sum(len(v) for v in adj.values()) // 2
    heap = [v for v, nbrs in adj.items() if len(nbrs) == 1]
    heapq.heapify(heap)
    flows: dict[Edge, Number] = {}
    while heap:
        v = heapq.heappop(heap)
        nbrs = adj[v]
        if len(nbrs) != 1:
            continue
        w = nbrs.pop()
        adj[w].discard(v)
        remaining -= 1
        b, c = (v, w - nb) if v < nb else (w, v - nb)
        q = min(src[b], snk[c])
        if q > 0:
            flows[(b, c)] = q
            src[b] -= q
            snk[c] -= q
        if len(adj[w]) == 1:
            heapq.heappush(heap, w)
    if remaining:
        raise CyclicNetwork("edge set contains a cycle")
    return flows


# balanced flows

MaxFlowFn = Callable[[dict[int, Number], dict[int, Number], list[Edge]], dict[Edge, Number]]


def _generic_sub_max_flow(src: dict[int, Number], snk: dict[int, Number], edges: list[Edge]) -> dict[Edge, Number]:
    buyers = sorted(src)
    goods = sorted(snk)
    bi = {b: k for k, b in enumerate(buyers)}
    gi = {g: k for k, g in enumerate(goods)}
    local = [(bi[i], gi[j]) for i, j in edges]
    num_nodes, arcs, s, t = _bipartite_arcs([src[b] for b in buyers], [snk[g] for g in goods], local)
    flow: list[Number] = [0] * len(arcs)
    _edmonds_karp(num_nodes, arcs, s, t, flow)
    off = len(buyers) + len(goods)
    return {edges[k]: flow[off + k] for k in range(len(edges)) if flow[off + k]}


def _forest_sub_max_flow(src: dict[int, Number], snk: dict[int, Number], edges: list[Edge]) -> dict[Edge, Number]:
    # relabel goods past the largest buyer index so one integer namespace works
    nb = (max(src) + 1) if src else 0
    s = [0] * nb
    for b, c in src.items():
        s[b] = c
    ng = (max(snk) + 1) if snk else 0
    k = [0] * ng
    for g, c in snk.items():
        k[g] = c
    return _forest_peel(s, k, edges, nb)


def _buyers_reaching_sink(
    src: Mapping[int, Number], snk: Mapping[int, Number], edges: list[Edge], flows: Mapping[Edge, Number]
) -> set[int]:
    """Buyers from which the sink is reachable in the residual network."""
    inflow: dict[int, Number] = {g: 0 for g in snk}
    for (i, j), v in flows.items():
        inflow[j] += v
    buyers_of: dict[int, list[int]] = {g: [] for g in snk}
    for i, j in edges:
        buyers_of[j].append(i)
    flow_goods: dict[int, list[int]] = {b: [] for b in src}
    for (i, j), v in flows.items():
        if v > 0:
            flow_goods[i].append(j)
    goods_in = {g for g in snk if snk[g] - inflow[g] > 0}
    buyers_in: set[int] = set()
    stack = list(goods_in)
    while stack:
        g = stack.pop()
        for b in buyers_of[g]:
            if b not in buyers_in:
                buyers_in.add(b)
                for g2 in flow_goods[b]:
                    if g2 not in goods_in:
                        goods_in.add(g2)
                        stack.append(g2)
    return buyers_in


def _balance(
    src: dict[int, Number], snk: dict[int, Number], edges: list[Edge], F: Number, mf: MaxFlowFn
) -> dict[Edge, Number]:
    """Balanced flow of the sub-network whose maximum flow value is ``F``.

    Surplus ``delta`` is what every buyer would keep if surplus were spread
    evenly.  If every buyer can spend down to ``delta`` the network is one
    surplus level.  Otherwise the buyers that stay on the source side of the
    maximal minimum cut with capacity left above ``delta`` form the top level
    block: they sell out their whole neighbourhood, so both sides recurse
    independently.
    """
    m = len(src)
    if m == 0:
        return {}
    total = sum(src.values())
    delta, rem = divmod(total - F, m)
    if rem:
        raise ArithmeticError("capacities are not balance-ready")
    caps = {b: max(c - delta, 0) for b, c in src.items()}
    flows = mf(caps, snk, edges)
    routed = sum(flows.values())
    if routed == sum(caps.values()):
        return flows
    reach = _buyers_reaching_sink(caps, snk, edges, flows)
    top = {b for b in src if b not in reach and src[b] > delta}
    if not top or len(top) == m:
        raise RuntimeError("balanced flow decomposition failed to split the buyers")
    top_goods = {j for i, j in edges if i in top}
    top_edges = [(i, j) for i, j in edges if i in top]
    bot_edges = [(i, j) for i, j in edges if i not in top and j not in top_goods]
    f_top = sum(snk[g] for g in top_goods)
    out = _balance({b: src[b] for b in top}, {g: snk[g] for g in top_goods}, top_edges, f_top, mf)
    out.update(
        _balance(
            {b: c for b, c in src.items() if b not in top},
            {g: c for g, c in snk.items() if g not in top_goods},
            bot_edges,
            F - f_top,
            mf,
        )
    )
    return out


def _balanced_state(net: EqualityNetwork, mf: MaxFlowFn) -> FlowState:
    net = net.balance_ready()
    src = dict(enumerate(net.source_caps))
    snk = dict(enumerate(net.sink_caps))
    edges = list(net.edges)
    first = mf(dict(src), dict(snk), edges)
    F = sum(first.values())
    if F == sum(src.values()):
        return FlowState(net, first)
    flows = _balance(src, snk, edges, F, mf)
    state = FlowState(net, flows)
    if state.value_units != F:
        raise RuntimeError("balanced flow lost maximality")
    return state


def balanced_flow(net: EqualityNetwork) -> FlowState:
    """A maximum flow minimizing the 2-norm of buyer surpluses.

    The result lives in ``net.balance_ready()``, which may use a finer scale
    than ``net``.
    """
    return _balanced_state(net, _generic_sub_max_flow)


def _check_start(net: EqualityNetwork, C0: Iterable[int], start: FlowState) -> FlowState:
    start = start.in_network(net)
    start.check_feasible()
    for g in C0:
        if start.good_surplus_units[g] != 0:
            raise InfeasibleFlow(f"start does not sell good {g} completely")
    return start


def _preserve(
    net: EqualityNetwork, C0: set[int], balanced: FlowState, forest: bool
) -> FlowState:
    """Re-route the zero-surplus part of ``balanced`` so every good of ``C0`` is sold."""
    high = {b for b, r in enumerate(balanced.buyer_surplus_units) if r > 0}
    high_goods = {j for (i, j) in balanced.flow if i in high}
    low_buyers = [b for b in range(net.n) if b not in high]
    low_goods = [g for g in range(net.n_goods) if g not in high_goods]
    low_good_set = set(low_goods)
    low_edges = [(i, j) for i, j in net.edges if i not in high and j in low_good_set]
    if all(balanced.good_surplus_units[g] == 0 for g in C0):
        return balanced
    supply = {b: net.source_caps[b] for b in low_buyers}
    demand = {g: net.sink_caps[g] for g in low_goods}
    exact = C0 & low_good_set
    if forest:
        low = _forest_exact_supply(supply, demand, exact, low_edges, net.n)
    else:
        low = _generic_exact_supply(supply, demand, exact, low_edges)
    flows = {e: v for e, v in balanced.flow.items() if e[0] in high}
    flows.update(low)
    out = FlowState(net, flows)
    if out.buyer_surplus_units != balanced.buyer_surplus_units:
        raise RuntimeError("re-routing changed the surplus vector")
    return out


def _generic_exact_supply(
    supply: dict[int, Number], demand: dict[int, Number], exact: set[int], edges: list[Edge]
) -> dict[Edge, Number]:
    """Saturate every buyer and every good in ``exact``, via an auxiliary sink.

    Goods outside ``exact`` drain into ``t'``, whose edge to ``t`` carries only
    what is left after the ``exact`` goods are paid for, so any maximum flow of
    full value sells all of them.
    """
    buyers = sorted(supply)
    goods = sorted(demand)
    nb, ng = len(buyers), len(goods)
    bi = {b: k for k, b in enumerate(buyers)}
    gi = {g: k for k, g in enumerate(goods)}
    s, tprime, t = 0, nb + ng + 1, nb + ng + 2
    total = sum(supply.values())
    needed = sum(demand[g] for g in exact)
    arcs: list[tuple[int, int, Number | None]] = []
    for b in buyers:
        arcs.append((s, 1 + bi[b], supply[b]))
    for g in goods:
        arcs.append((1 + nb + gi[g], t if g in exact else tprime, demand[g]))
    arcs.append((tprime, t, total - needed))
    first_edge = len(arcs)
    for i, j in edges:
        arcs.append((1 + bi[i], 1 + nb + gi[j], _INF))
    flow: list[Number] = [0] * len(arcs)
    if total - needed < 0:
        raise InfeasibleFlow("goods to keep sold are worth more than the buyers' money")
    _edmonds_karp(nb + ng + 3, arcs, s, t, flow)
    if sum(flow[:nb]) != total:
        raise InfeasibleFlow("cannot keep every sold good sold")
    return {edges[k]: flow[first_edge + k] for k in range(len(edges)) if flow[first_edge + k]}


def _forest_exact_supply(
    supply: dict[int, Number], demand: dict[int, Number], exact: set[int], edges: list[Edge], nb: int
) -> dict[Edge, Number]:
    """Same contract as :func:`_generic_exact_supply` for an acyclic edge set.

    Each tree is rooted at its lowest vertex.  Bottom-up, every vertex gets
    the interval of flows on its parent edge that its subtree can absorb;
    top-down, flows are fixed inside those intervals.
    """
    adj: dict[int, list[int]] = {v: [] for v in supply}
    for g in demand:
        adj[nb + g] = []
    for i, j in edges:
        adj[i].append(nb + j)
        adj[nb + j].append(i)
    for v in adj:
        adj[v].sort()

    def need(v: int) -> tuple[Number, bool]:
        if v < nb:
            return supply[v], True
        g = v - nb
        return demand[g], g in exact

    lo: dict[int, Number] = {}
    hi: dict[int, Number] = {}
    flows: dict[Edge, Number] = {}
    visited: set[int] = set()
    for root in sorted(adj):
        if root in visited:
            continue
        order: list[int] = []
        parent: dict[int, int | None] = {root: None}
        stack = [root]
        visited.add(root)
        while stack:
            v = stack.pop()
            order.append(v)
            for w in adj[v]:
                if w == parent[v]:
                    continue
                if w in visited:
                    raise CyclicNetwork("edge set contains a cycle")
                visited.add(w)
                parent[w] = v
                stack.append(w)
        children: dict[int, list[int]] = {v: [w for w in adj[v] if parent.get(w) == v] for v in order}
        for v in reversed(order):
            amount, is_exact = need(v)
            sum_lo = sum(lo[w] for w in children[v])
            sum_hi = sum(hi[w] for w in children[v])
            if parent[v] is None:
                ok = (sum_lo <= amount <= sum_hi) if is_exact else (sum_lo <= amount)
                if not ok:
                    raise InfeasibleFlow("cannot keep every sold good sold")
                continue
            if is_exact:
                a, b = max(amount - sum_hi, 0), amount - sum_lo
            else:
                a, b = 0, amount - sum_lo
            if a > b:
                raise InfeasibleFlow("cannot keep every sold good sold")
            lo[v], hi[v] = a, b
        for v in order:
            p = parent[v]
            incoming = 0 if p is None else flows.get(_edge(v, p, nb), 0)
            amount, is_exact = need(v)
            kids = children[v]
            if not kids:
                continue
            sum_lo = sum(lo[w] for w in kids)
            sum_hi = sum(hi[w] for w in kids)
            target = amount - incoming if is_exact else min(sum_hi, amount - incoming)
            extra = target - sum_lo
            for w in kids:
                give = min(hi[w] - lo[w], extra)
                extra -= give
                flows[_edge(v, w, nb)] = lo[w] + give
            if extra != 0:
                raise InfeasibleFlow("cannot keep every sold good sold")
    return {e: v for e, v in flows.items() if v}


def _edge(v: int, w: int, nb: int) -> Edge:
    return (v, w - nb) if v < nb else (w, v - nb)


def balanced_flow_preserving(net: EqualityNetwork, C0: Iterable[int], start: FlowState) -> FlowState:
    """A balanced flow in which every good of ``C0`` stays completely sold.

    ``start`` only has to be feasible and sell ``C0``; it certifies that such a
    balanced flow exists.
    """
    net = net.balance_ready()
    C0 = set(C0)
    _check_start(net, C0, start)
    return _preserve(net, C0, _balanced_state(net, _generic_sub_max_flow), forest=False)


def forest_balanced_flow(net: EqualityNetwork, C0: Iterable[int], start: FlowState | None) -> FlowState:
    """:func:`balanced_flow_preserving` with leaf-peeling max flows on an acyclic edge set.

    ``start`` may be ``None`` when ``C0`` is empty.
    """
    net = net.balance_ready()
    C0 = set(C0)
    if start is not None:
        _check_start(net, C0, start)
    elif C0:
        raise InfeasibleFlow("a start flow is required to preserve sold goods")
    return _preserve(net, C0, _balanced_state(net, _forest_sub_max_flow), forest=True)


def is_balanced(net: EqualityNetwork, flow: FlowState) -> bool:
    """Audit: buyers sharing a good with a buyer that pays for it have no more surplus."""
    flow = flow.in_network(net) if flow.net.scale != net.scale else flow
    if flow.value_units != max_flow(flow.net).value_units:
        raise ValueError("flow is not maximum")
    r = flow.buyer_surplus_units
    buyers_of: dict[int, list[int]] = {}
    for i, j in flow.net.edges:
        buyers_of.setdefault(j, []).append(i)
    for (i, j), v in flow.flow.items():
        if v > 0:
            for k in buyers_of[j]:
                if r[k] > r[i]:
                    return False
    return True
