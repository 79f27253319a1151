"""Linear exchange markets: instances, validation, degeneracy, perturbation.

Agent ``i`` owns one unit of good ``i`` and derives utility ``u[i][j]`` per unit
of good ``j``.  The perturbed market replaces every positive utility by a
:class:`~arrowdebreu.exactnum.PowValue` whose real part rounds ``u_ij`` and whose
infinitesimal part encodes a distinct prime, which puts utilities in general
position: every equality graph becomes a forest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd, lcm
from typing import Iterator, Sequence

from .exactnum import PowValue, SolverConfig, exponent_of, make_config

__all__ = [
    "MarketInstance",
    "Violation",
    "InvalidInstance",
    "validate",
    "CycleWitness",
    "is_degenerate",
    "simple_cycles",
    "PerturbedInstance",
    "perturb",
    "FisherReduction",
    "fisher_to_ad",
    "equality_edges",
    "is_forest",
]


@dataclass(frozen=True)
class MarketInstance:
    """A linear Arrow-Debreu market with ``n`` agents and integer utilities in ``[0, U]``."""

    u: tuple[tuple[int, ...], ...]
    U: int
    fisher_budgets: tuple[Fraction, ...] | None = None

    def __post_init__(self) -> None:
        rows = tuple(tuple(int(x) for x in row) for row in self.u)
        object.__setattr__(self, "u", rows)
        if self.fisher_budgets is not None:
            object.__setattr__(self, "fisher_budgets", tuple(Fraction(b) for b in self.fisher_budgets))

    @classmethod
    def from_rows(cls, u: Sequence[Sequence[int]], U: int | None = None, fisher_budgets=None) -> MarketInstance:
        if U is None:
            U = max((max(row) for row in u if row), default=1) or 1
        return cls(tuple(tuple(row) for row in u), U, None if fisher_budgets is None else tuple(fisher_budgets))

    @property
    def n(self) -> int:
        return len(self.u)

    def positive_edges(self) -> list[tuple[int, int]]:
        """Utility edges ``(i, j)`` with ``u_ij > 0`` in row-major order."""
        return [(i, j) for i, row in enumerate(self.u) for j, x in enumerate(row) if x > 0]


@dataclass(frozen=True)
class Violation:
    """Why an instance fails the market assumptions.

    ``kind`` is ``"shape"``, ``"range"``, ``"row-zero"``, ``"column-zero"`` or
    ``"connectivity"``; ``index`` names the offending row/column and
    ``subset`` the agent set with no utility edge leaving it.
    """

    kind: str
    message: str
    index: int | None = None
    subset: frozenset[int] | None = None


class InvalidInstance(ValueError):
    def __init__(self, violation: Violation):
        super().__init__(violation.message)
        self.violation = violation


def validate(inst: MarketInstance, *, fisher: bool = False) -> Violation | None:
    """Return ``None`` if ``inst`` satisfies the market assumptions, else the first violation.

    Fisher inputs skip the connectivity requirement since budgets are exogenous.
    """
    n = inst.n
    if n == 0 or any(len(row) != n for row in inst.u):
        return Violation("shape", "utility matrix must be square and nonempty")
    if inst.U < 1:
        return Violation("range", f"utility bound U must be positive, got {inst.U}")
    for i, row in enumerate(inst.u):
        for j, x in enumerate(row):
            if x < 0 or x > inst.U:
                return Violation("range", f"u[{i}][{j}] = {x} outside [0, {inst.U}]", index=i)
    for i, row in enumerate(inst.u):
        if max(row) == 0:
            return Violation("row-zero", f"agent {i} likes no good", index=i)
    for j in range(n):
        if all(inst.u[i][j] == 0 for i in range(n)):
            return Violation("column-zero", f"good {j} is liked by nobody", index=j)
    if fisher:
        if inst.fisher_budgets is not None:
            if len(inst.fisher_budgets) != n:
                return Violation("shape", "one budget per buyer required")
            for i, b in enumerate(inst.fisher_budgets):
                if b <= 0:
                    return Violation("range", f"budget {i} is not positive", index=i)
        return None
    closed = _closed_subset(inst)
    if closed is not None:
        return Violation(
            "connectivity",
            f"agents {sorted(closed)} like only goods owned inside the set",
            subset=frozenset(closed),
        )
    return None


def _closed_subset(inst: MarketInstance) -> set[int] | None:
    """A proper agent subset with no utility arc leaving it, if one exists.

    Arcs ``i -> j`` for ``u_ij > 0``; the graph is strongly connected iff no
    such subset exists.  We return the set reachable from the first agent whose
    reachable set is proper.
    """
    n = inst.n
    adj = [[j for j in range(n) if inst.u[i][j] > 0] for i in range(n)]
    for start in range(n):
        seen = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) < n:
            return seen
    return None


@dataclass(frozen=True)
class CycleWitness:
    """An alternating cycle ``b_0 c_0 b_1 c_1 ... b_{k-1} c_{k-1} b_0``.

    ``d0`` holds edges ``(b_t, c_t)`` and ``d1`` holds ``(b_{t+1}, c_t)``; the
    cycle is degenerate when the utility products over both classes agree.
    """

    buyers: tuple[int, ...]
    goods: tuple[int, ...]

    @property
    def d0(self) -> tuple[tuple[int, int], ...]:
        return tuple(zip(self.buyers, self.goods))

    @property
    def d1(self) -> tuple[tuple[int, int], ...]:
        k = len(self.buyers)
        return tuple((self.buyers[(t + 1) % k], self.goods[t]) for t in range(k))

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        out = []
        for e0, e1 in zip(self.d0, self.d1):
            out.extend((e0, e1))
        return tuple(out)


def simple_cycles(support: Sequence[Sequence[bool]]) -> Iterator[CycleWitness]:
    """Every simple cycle of the bipartite graph with edges where ``support[i][j]``.

    Each cycle is reported once per traversal direction, starting from its
    lowest-index buyer.
    """
    n = len(support)
    m = len(support[0]) if n else 0
    goods_of = [[j for j in range(m) if support[i][j]] for i in range(n)]
    buyers_of = [[i for i in range(n) if support[i][j]] for j in range(m)]

    for start in range(n):
        buyers = [start]
        goods: list[int] = []
        used_b = {start}
        used_g: set[int] = set()

        def extend() -> Iterator[CycleWitness]:
            b = buyers[-1]
            for c in goods_of[b]:
                if c in used_g:
                    continue
                goods.append(c)
                used_g.add(c)
                if len(goods) >= 2 and support[start][c]:
                    yield CycleWitness(tuple(buyers), tuple(goods))
                for nb in buyers_of[c]:
                    if nb > start and nb not in used_b:
                        buyers.append(nb)
                        used_b.add(nb)
                        yield from extend()
                        used_b.discard(nb)
                        buyers.pop()
                used_g.discard(c)
                goods.pop()

        yield from extend()


def is_degenerate(inst: MarketInstance) -> tuple[bool, CycleWitness | None]:
    """Whether some cycle of the utility graph has equal alternating products.

    A spanning forest with multiplicative potentials decides the fundamental
    cycles quickly; a fundamental check alone misses degenerate cycles that
    combine several non-degenerate fundamental ones, so when it finds nothing
    every simple cycle is checked exactly.
    """
    u = inst.u
    n = inst.n
    witness = _fundamental_degenerate_cycle(inst)
    if witness is not None:
        return True, witness
    support = [[u[i][j] > 0 for j in range(n)] for i in range(n)]
    for cyc in simple_cycles(support):
        p0 = 1
        p1 = 1
        for i, j in cyc.d0:
            p0 *= u[i][j]
        for i, j in cyc.d1:
            p1 *= u[i][j]
        if p0 == p1:
            return True, cyc
    return False, None


def _fundamental_degenerate_cycle(inst: MarketInstance) -> CycleWitness | None:
    n = inst.n
    u = inst.u
    # vertices: buyers 0..n-1, goods n..2n-1; potential phi(c) = phi(b) * u_bc
    phi: dict[int, Fraction] = {}
    parent: dict[int, int | None] = {}
    adj: list[list[int]] = [[] for _ in range(2 * n)]
    for i, j in inst.positive_edges():
        adj[i].append(n + j)
        adj[n + j].append(i)
    tree_edges: set[tuple[int, int]] = set()
    for root in range(2 * n):
        if root in phi:
            continue
        phi[root] = Fraction(1)
        parent[root] = None
        queue = [root]
        for v in queue:
            for w in adj[v]:
                if w in phi:
                    continue
                phi[w] = phi[v] * u[v][w - n] if v < n else phi[v] / u[w][v - n]
                parent[w] = v
                tree_edges.add((min(v, w), max(v, w)))
                queue.append(w)
    for i, j in inst.positive_edges():
        if (i, n + j) in tree_edges:
            continue
        if phi[n + j] == phi[i] * u[i][j]:
            return _tree_cycle(i, n + j, parent, n)
    return None


def _tree_cycle(b: int, c: int, parent: dict[int, int | None], n: int) -> CycleWitness:
    """Cycle closed by non-tree edge ``(b, c)`` as alternating buyer/good lists."""

    def path_to_root(v: int) -> list[int]:
        out = [v]
        while parent[out[-1]] is not None:
            out.append(parent[out[-1]])  # type: ignore[arg-type]
        return out

    pb, pc = path_to_root(b), path_to_root(c)
    common = set(pb) & set(pc)
    lca_b = next(i for i, v in enumerate(pb) if v in common)
    lca = pb[lca_b]
    lca_c = pc.index(lca)
    # b up to the common ancestor, then down to c; edge (c, b) closes the cycle
    walk = pb[: lca_b + 1] + list(reversed(pc[:lca_c]))
    buyers = tuple(v for v in walk if v < n)
    goods = tuple(v - n for v in walk if v >= n)
    return CycleWitness(buyers, goods)


@dataclass(frozen=True)
class PerturbedInstance:
    """A market whose utilities are exponent pairs in general position."""

    base: MarketInstance
    cfg: SolverConfig
    q: dict[tuple[int, int], int] = field(repr=False)
    e: dict[tuple[int, int], int] = field(repr=False)
    l: dict[tuple[int, int], int] = field(repr=False)

    @property
    def n(self) -> int:
        return self.base.n

    def utility(self, i: int, j: int) -> PowValue | None:
        key = (i, j)
        if key not in self.e:
            return None
        return PowValue(self.e[key], self.l[key])

    def rows(self) -> list[list[tuple[int, int, int]]]:
        """Per buyer, ``(good, e_ij, l_ij)`` for each positive-utility edge."""
        out: list[list[tuple[int, int, int]]] = [[] for _ in range(self.n)]
        for (i, j), ev in self.e.items():
            out[i].append((j, ev, self.l[(i, j)]))
        for row in out:
            row.sort()
        return out


def perturb(inst: MarketInstance, cfg: SolverConfig | None = None) -> PerturbedInstance:
    """Attach distinct primes (row-major) and rounded exponents to every utility edge."""
    edges = inst.positive_edges()
    if cfg is None:
        cfg = make_config(inst.n, inst.U, edges_needed=len(edges))
    if len(cfg.primes) < len(edges):
        raise ValueError("configuration has fewer primes than utility edges")
    q = {edge: cfg.primes[k] for k, edge in enumerate(edges)}
    e = {(i, j): exponent_of(inst.u[i][j], cfg.L) for i, j in edges}
    l = {edge: exponent_of(q[edge], cfg.Lprime) for edge in edges}
    return PerturbedInstance(inst, cfg, q, e, l)


@dataclass(frozen=True)
class FisherReduction:
    """Embedding of a Fisher market into an own-good Arrow-Debreu market.

    Buyer ``i`` becomes agent ``i`` owning a money good worth its budget; good
    ``j`` is owned by a seller agent ``n + j`` who values money good ``i`` at
    the integer weight ``w_i`` proportional to budget ``a_i``.  At equilibrium
    the seller's spending splits its revenue over money goods in proportion to
    their prices, which forces money prices proportional to budgets.
    """

    budgets: tuple[Fraction, ...]
    weights: tuple[int, ...]
    fisher_u: tuple[tuple[int, ...], ...]
    market: MarketInstance

    @property
    def n_buyers(self) -> int:
        return len(self.budgets)

    def fisher_prices(self, ad_prices: Sequence[Fraction]) -> list[Fraction]:
        """Back-map: real-good prices scaled so that they sum to the total budget."""
        nb = self.n_buyers
        goods = [Fraction(p) for p in ad_prices[nb:]]
        factor = sum(self.budgets) / sum(goods)
        return [p * factor for p in goods]

    def fisher_flows(self, ad_prices: Sequence[Fraction], ad_flow: dict[tuple[int, int], Fraction]) -> dict[tuple[int, int], Fraction]:
        """Money flows buyer -> real good, scaled like :meth:`fisher_prices`."""
        nb = self.n_buyers
        factor = sum(self.budgets) / sum(Fraction(p) for p in ad_prices[nb:])
        return {(i, j - nb): f * factor for (i, j), f in ad_flow.items() if i < nb and j >= nb}


def fisher_to_ad(budgets: Sequence[Fraction], u: Sequence[Sequence[int]]) -> FisherReduction:
    budgets = tuple(Fraction(b) for b in budgets)
    if any(b <= 0 for b in budgets):
        raise ValueError("Fisher budgets must be positive")
    nb = len(budgets)
    if len(u) != nb:
        raise ValueError("one utility row per budget required")
    ng = len(u[0])
    probe = MarketInstance.from_rows(u, U=max(1, max(max(r) for r in u)))
    if ng != nb:
        raise ValueError("utility matrix must be square")
    violation = validate(probe, fisher=True)
    if violation is not None:
        raise InvalidInstance(violation)
    den = lcm(*(b.denominator for b in budgets))
    ints = [int(b * den) for b in budgets]
    g = 0
    for x in ints:
        g = gcd(g, x)
    weights = tuple(x // g for x in ints)
    size = nb + ng
    rows = [[0] * size for _ in range(size)]
    for i in range(nb):
        for j in range(ng):
            rows[i][nb + j] = int(u[i][j])
    for j in range(ng):
        for i in range(nb):
            rows[nb + j][i] = weights[i]
    U = max(probe.U, max(weights))
    market = MarketInstance.from_rows(rows, U=U)
    return FisherReduction(budgets, weights, tuple(tuple(int(x) for x in r) for r in u), market)


def equality_edges(
    pinst: PerturbedInstance, prices: Sequence[PowValue]
) -> tuple[list[tuple[int, int]], list[PowValue]]:
    """Maximum bang-per-buck edges and each buyer's best ratio ``alpha_i``."""
    edges: list[tuple[int, int]] = []
    alphas: list[PowValue] = []
    for i, row in enumerate(pinst.rows()):
        best = None
        goods: list[int] = []
        for j, ev, lv in row:
            pa, pb = prices[j]
            ratio = (ev - pa, lv - pb)
            if best is None or ratio > best:
                best = ratio
                goods = [j]
            elif ratio == best:
                goods.append(j)
        assert best is not None
        alphas.append(PowValue(*best))
        edges.extend((i, j) for j in goods)
    return edges, alphas


def is_forest(edges: Sequence[tuple[int, int]], n_buyers: int, n_goods: int | None = None) -> bool:
    """Whether the bipartite buyer/good edge set is acyclic."""
    if n_goods is None:
        n_goods = n_buyers
    parent = list(range(n_buyers + n_goods))

    def find(v: int) -> int:
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for i, j in edges:
        ri, rj = find(i), find(n_buyers + j)
        if ri == rj:
            return False
        parent[ri] = rj
    return True
