"""Exact equilibrium prices from the terminal state of the phase loop.

The equality graph at the end of the phase loop determines a square linear
system in the prices: one ratio equation per extra edge of each buyer, one
money-balance equation per connected component (all but one) and a
normalization.  Solved over the rationals with the original utilities, it
yields the exact equilibrium, which is then checked from scratch with a
maximum flow.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import lcm
from typing import Sequence

from .exactnum import PowValue
from .flows import EqualityNetwork, FlowState, max_flow
from .market import MarketInstance, PerturbedInstance, equality_edges
from .solver import PartAResult

__all__ = [
    "LinearSystem",
    "EquilibriumCertificate",
    "ExtractionError",
    "SingularSystem",
    "spanning_forest",
    "assemble_system",
    "solve_exact",
    "verify_equilibrium",
    "canonicalize",
    "run_part_b",
]


class ExtractionError(RuntimeError):
    def __init__(self, message: str, certificate: EquilibriumCertificate | None = None):
        super().__init__(message)
        self.certificate = certificate


class SingularSystem(ExtractionError):
    pass


@dataclass(frozen=True)
class LinearSystem:
    """``A p = X`` with one provenance tag per row: forest, component or price-one."""

    A: tuple[tuple[Fraction, ...], ...]
    X: tuple[Fraction, ...]
    provenance: tuple[str, ...]


@dataclass(frozen=True)
class EquilibriumCertificate:
    prices: tuple[Fraction, ...]
    allocation: tuple[tuple[Fraction, ...], ...]
    goods_sold: bool
    money_spent: bool
    max_bang_per_buck: bool
    budgets: tuple[Fraction, ...] | None = None

    @property
    def passed(self) -> bool:
        return self.goods_sold and self.money_spent and self.max_bang_per_buck

    def money_flow(self, i: int, j: int) -> Fraction:
        return self.allocation[i][j] * self.prices[j]


class _DSU:
    def __init__(self, size: int):
        self.parent = list(range(size))

    def find(self, v: int) -> int:
        while self.parent[v] != v:
            self.parent[v] = self.parent[self.parent[v]]
            v = self.parent[v]
        return v

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def spanning_forest(edges: Sequence[tuple[int, int]], n: int) -> list[tuple[int, int]]:
    """Maximal acyclic subset, taking edges in increasing order."""
    dsu = _DSU(2 * n)
    return [(i, j) for i, j in sorted(edges) if dsu.union(i, n + j)]


def _components(edges: Sequence[tuple[int, int]], n: int, extended: bool = False) -> list[list[int]]:
    """Vertex sets (buyers ``0..n-1``, goods ``n..2n-1``) sorted by smallest vertex."""
    dsu = _DSU(2 * n)
    for i, j in edges:
        dsu.union(i, n + j)
    if extended:
        for i in range(n):
            dsu.union(i, n + i)
    groups: dict[int, list[int]] = {}
    for v in range(2 * n):
        groups.setdefault(dsu.find(v), []).append(v)
    return sorted(groups.values(), key=lambda g: g[0])


def assemble_system(
    edges: Sequence[tuple[int, int]],
    u: Sequence[Sequence[int]],
    prices: Sequence,
) -> LinearSystem:
    """Price equations of an equality graph, using the unperturbed utilities.

    ``prices`` only selects the good pinned to one (lowest index among the
    cheapest); any totally ordered price representation works.
    """
    n = len(u)
    forest = spanning_forest(edges, n)
    rows: list[list[Fraction]] = []
    rhs: list[Fraction] = []
    tags: list[str] = []
    nbrs: dict[int, list[int]] = {}
    for i, j in forest:
        nbrs.setdefault(i, []).append(j)
    for i in sorted(nbrs):
        goods = sorted(nbrs[i])
        j1 = goods[0]
        for jl in goods[1:]:
            # u_{i j1} p_{jl} - u_{i jl} p_{j1} = 0
            row = [Fraction(0)] * n
            row[jl] += u[i][j1]
            row[j1] -= u[i][jl]
            rows.append(row)
            rhs.append(Fraction(0))
            tags.append("forest")
    cheapest = min(range(n), key=lambda j: (prices[j], j))
    for comp in _components(forest, n):
        if n + cheapest in comp:
            continue
        row = [Fraction(0)] * n
        for v in comp:
            if v < n:
                row[v] += 1
            else:
                row[v - n] -= 1
        rows.append(row)
        rhs.append(Fraction(0))
        tags.append("component")
    row = [Fraction(0)] * n
    row[cheapest] = Fraction(1)
    rows.append(row)
    rhs.append(Fraction(1))
    tags.append("price-one")
    if len(rows) != n:
        raise ExtractionError(f"equation system has {len(rows)} rows for {n} prices")
    return LinearSystem(tuple(tuple(r) for r in rows), tuple(rhs), tuple(tags))


def solve_exact(system: LinearSystem) -> list[Fraction]:
    """Fraction-free (Bareiss) elimination; raises :class:`SingularSystem` on rank loss."""
    n = len(system.A)
    if any(len(r) != n for r in system.A):
        raise ValueError("system must be square")
    # clear denominators row by row so elimination runs on integers
    M: list[list[int]] = []
    for row, x in zip(system.A, system.X):
        d = lcm(*(Fraction(v).denominator for v in (*row, x)))
        M.append([int(Fraction(v) * d) for v in (*row, x)])
    prev = 1
    for k in range(n):
        pivot = next((r for r in range(k, n) if M[r][k] != 0), None)
        if pivot is None:
            raise SingularSystem("singular price system")
        if pivot != k:
            M[k], M[pivot] = M[pivot], M[k]
        pk = M[k][k]
        for r in range(k + 1, n):
            mr = M[r][k]
            Mr, Mk = M[r], M[k]
            for c in range(k + 1, n + 1):
                Mr[c] = (Mr[c] * pk - mr * Mk[c]) // prev
            Mr[k] = 0
        prev = pk
    sol = [Fraction(0)] * n
    for k in range(n - 1, -1, -1):
        acc = Fraction(M[k][n])
        for c in range(k + 1, n):
            acc -= M[k][c] * sol[c]
        sol[k] = acc / M[k][k]
    return sol


def verify_equilibrium(
    inst: MarketInstance | Sequence[Sequence[int]],
    prices: Sequence[Fraction],
    budgets: Sequence[Fraction] | None = None,
) -> EquilibriumCertificate:
    """Check the equilibrium conditions exactly.

    Money first flows on maximum bang-per-buck edges only; if that does not
    clear the market it is topped up along any positive-utility edge, so the
    three verdicts describe one allocation: a failing bang-per-buck verdict
    means the market clears only with suboptimal purchases.  With
    ``budgets`` (Fisher markets) buyer ``i`` spends ``a_i * sum(p) / sum(a)``
    instead of the value of its own good.
    """
    u = inst.u if isinstance(inst, MarketInstance) else tuple(tuple(r) for r in inst)
    n = len(u)
    p = [Fraction(x) for x in prices]
    if len(p) != n or any(x <= 0 for x in p):
        raise ValueError("prices must be positive, one per good")
    if budgets is None:
        money = p
    else:
        a = [Fraction(x) for x in budgets]
        total = sum(p)
        money = [ai * total / sum(a) for ai in a]
    eq: list[tuple[int, int]] = []
    for i in range(n):
        alpha = max(Fraction(u[i][j]) / p[j] for j in range(n))
        if alpha <= 0:
            raise ValueError(f"buyer {i} has no positive utility")
        eq.extend((i, j) for j in range(n) if Fraction(u[i][j]) / p[j] == alpha)
    net = EqualityNetwork.from_rationals(money, p, eq)
    best = max_flow(net)
    allowed = [(i, j) for i in range(n) for j in range(n) if u[i][j] > 0]
    full = EqualityNetwork(net.source_caps, net.sink_caps, tuple(allowed), net.scale)
    flow = max_flow(full, warm_start=FlowState(full, best.flow))
    eq_set = set(eq)
    goods_sold = all(r == 0 for r in flow.good_surplus_units)
    money_spent = all(r == 0 for r in flow.buyer_surplus_units)
    mbb = all(e in eq_set for e, v in flow.flow.items() if v > 0)
    alloc = tuple(tuple(flow.f(i, j) / p[j] for j in range(n)) for i in range(n))
    return EquilibriumCertificate(
        prices=tuple(p),
        allocation=alloc,
        goods_sold=goods_sold,
        money_spent=money_spent,
        max_bang_per_buck=mbb,
        budgets=None if budgets is None else tuple(Fraction(b) for b in budgets),
    )


def canonicalize(
    pinst: PerturbedInstance, prices: Sequence[PowValue]
) -> tuple[list[PowValue], list[tuple[int, int]]]:
    """Raise prices of components until every agent is linked to the cheapest good.

    Components are those of the equality graph plus each agent's edge to its
    own good.  A component without the cheapest good has its prices raised by
    the smallest factor that creates an equality edge leaving it.
    """
    n = pinst.n
    p = list(prices)
    rows = pinst.rows()
    for _ in range(n):
        edges, alphas = equality_edges(pinst, p)
        comps = _components(edges, n, extended=True)
        if len(comps) == 1:
            return p, edges
        cheapest = min(range(n), key=lambda j: (p[j], j))
        comp = next(c for c in comps if n + cheapest not in c)
        members = set(comp)
        best = None
        for i in (v for v in comp if v < n):
            aa, ab = alphas[i]
            for j, e, l in rows[i]:
                if n + j in members:
                    continue
                cand = (aa - e + p[j].a, ab - l + p[j].b)
                if best is None or cand < best:
                    best = cand
        if best is None:
            raise ExtractionError("component has no utility edge leaving it")
        for v in comp:
            if v >= n:
                g = v - n
                p[g] = PowValue(p[g].a + best[0], p[g].b + best[1])
    edges, _ = equality_edges(pinst, p)
    if len(_components(edges, n, extended=True)) != 1:
        raise ExtractionError("canonicalization did not connect the equality graph")
    return p, edges


def run_part_b(result: PartAResult, inst: MarketInstance | None = None) -> EquilibriumCertificate:
    """Solve for exact prices from the terminal equality graph and verify them."""
    if inst is None:
        inst = result.pinst.base
    prices, edges = canonicalize(result.pinst, result.prices.p)
    system = assemble_system(edges, inst.u, prices)
    sol = solve_exact(system)
    if any(x <= 0 for x in sol):
        raise ExtractionError(f"nonpositive price in solution {sol}")
    low = min(sol)
    sol = [x / low for x in sol]
    cert = verify_equilibrium(inst, sol)
    if not cert.passed:
        raise ExtractionError("extracted prices fail verification", cert)
    return cert
