"""Independent brute-force references used to cross-check the main solver.

Nothing here shares code with the main algorithms beyond data types: maximum
flows use push-relabel instead of augmenting paths, linear systems use
Gauss-Jordan on fractions instead of Bareiss elimination, and equilibria come
from enumerating every candidate equality forest.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction
from itertools import combinations, permutations
from typing import Iterable, Iterator, Sequence

import cvxpy as cp
import numpy as np

from .extraction import SingularSystem
from .flows import EqualityNetwork
from .market import MarketInstance

__all__ = [
    "OracleTooLarge",
    "reference_max_flow",
    "reference_solve",
    "enumerate_equilibrium",
    "is_equilibrium",
    "balanced_qp",
    "brute_force_cycles",
    "brute_force_degenerate",
]


class OracleTooLarge(ValueError):
    pass


def reference_max_flow(net: EqualityNetwork) -> Fraction:
    """Maximum flow value by FIFO push-relabel."""
    nb, ng = net.n, net.n_goods
    s, t = 0, nb + ng + 1
    size = nb + ng + 2
    big = sum(net.source_caps) + 1
    cap: list[dict[int, int]] = [dict() for _ in range(size)]

    def add(a: int, b: int, c: int) -> None:
        cap[a][b] = cap[a].get(b, 0) + c
        cap[b].setdefault(a, 0)

    for i, c in enumerate(net.source_caps):
        add(s, 1 + i, c)
    for j, c in enumerate(net.sink_caps):
        add(1 + nb + j, t, c)
    for i, j in net.edges:
        add(1 + i, 1 + nb + j, big)
    height = [0] * size
    excess = [0] * size
    height[s] = size
    active: deque[int] = deque()
    for v, c in list(cap[s].items()):
        if c > 0:
            cap[s][v] -= c
            cap[v][s] += c
            excess[v] += c
            excess[s] -= c
            if v != t:
                active.append(v)
    while active:
        v = active.popleft()
        while excess[v] > 0:
            pushed = False
            for w, c in cap[v].items():
                if c > 0 and height[v] == height[w] + 1:
                    d = min(excess[v], c)
                    cap[v][w] -= d
                    cap[w][v] += d
                    excess[v] -= d
                    excess[w] += d
                    if w not in (s, t) and excess[w] == d:
                        active.append(w)
                    pushed = True
                    if excess[v] == 0:
                        break
            if not pushed:
                height[v] = 1 + min(height[w] for w, c in cap[v].items() if c > 0)
    return Fraction(excess[t], net.scale)


def reference_solve(A: Sequence[Sequence[Fraction]], X: Sequence[Fraction]) -> list[Fraction]:
    """Gauss-Jordan elimination over fractions."""
    n = len(A)
    M = [[Fraction(v) for v in row] + [Fraction(x)] for row, x in zip(A, X)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if M[r][col] != 0), None)
        if pivot is None:
            raise SingularSystem("singular matrix")
        M[col], M[pivot] = M[pivot], M[col]
        pv = M[col][col]
        M[col] = [v / pv for v in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return [M[r][n] for r in range(n)]


def is_equilibrium(
    u: Sequence[Sequence[int]], prices: Sequence[Fraction], budgets: Sequence[Fraction] | None = None
) -> bool:
    """Whether money can flow on bang-per-buck edges only and clear every good."""
    n = len(u)
    p = [Fraction(x) for x in prices]
    if any(x <= 0 for x in p):
        return False
    if budgets is None:
        money = p
    else:
        total_b = sum(Fraction(b) for b in budgets)
        money = [Fraction(b) * sum(p) / total_b for b in budgets]
    edges = []
    for i in range(n):
        alpha = max(Fraction(u[i][j]) / p[j] for j in range(n))
        edges.extend((i, j) for j in range(n) if u[i][j] > 0 and Fraction(u[i][j]) / p[j] == alpha)
    net = EqualityNetwork.from_rationals(money, p, edges)
    value = reference_max_flow(net)
    return value == sum(p) == sum(money)


def enumerate_equilibrium(
    inst: MarketInstance | Sequence[Sequence[int]],
    budgets: Sequence[Fraction] | None = None,
    max_n: int = 4,
) -> list[tuple[Fraction, ...]]:
    """All equilibrium price vectors supported on an equality forest, minimum price one.

    Every forest of utility edges touching all buyers and goods is a
    candidate; its price equations (ratio equations along each buyer's edges,
    money balance per tree) are solved exactly and kept if the prices are
    positive, the forest edges are best buys and the market clears.
    """
    u = inst.u if isinstance(inst, MarketInstance) else tuple(tuple(r) for r in inst)
    if budgets is None and isinstance(inst, MarketInstance) and inst.fisher_budgets is not None:
        budgets = inst.fisher_budgets
    n = len(u)
    if n > max_n:
        raise OracleTooLarge(f"support enumeration limited to n <= {max_n}")
    edges = [(i, j) for i in range(n) for j in range(n) if u[i][j] > 0]
    found: set[tuple[Fraction, ...]] = set()
    for size in range(n, 2 * n):
        for subset in combinations(edges, size):
            trees = _forest_components(subset, n)
            if trees is None:
                continue
            rows, rhs = _candidate_system(subset, trees, u, n, budgets)
            try:
                p = reference_solve(rows, rhs)
            except SingularSystem:
                continue
            if any(x <= 0 for x in p):
                continue
            if not all(_is_best(u, p, i, j) for i, j in subset):
                continue
            if not is_equilibrium(u, p, budgets):
                continue
            low = min(p)
            found.add(tuple(x / low for x in p))
    return sorted(found)


def _is_best(u: Sequence[Sequence[int]], p: Sequence[Fraction], i: int, j: int) -> bool:
    ratio = Fraction(u[i][j]) / p[j]
    return all(Fraction(u[i][k]) / p[k] <= ratio for k in range(len(p)))


def _forest_components(subset: Sequence[tuple[int, int]], n: int) -> list[set[int]] | None:
    """Vertex sets of the trees if ``subset`` is a forest touching every vertex."""
    parent = list(range(2 * n))

    def find(v: int) -> int:
        while parent[v] != v:
            v = parent[v]
        return v

    touched = set()
    for i, j in subset:
        a, b = find(i), find(n + j)
        if a == b:
            return None
        parent[a] = b
        touched.update((i, n + j))
    if len(touched) != 2 * n:
        return None
    trees: dict[int, set[int]] = {}
    for v in range(2 * n):
        trees.setdefault(find(v), set()).add(v)
    return list(trees.values())


def _candidate_system(subset, trees, u, n, budgets):
    rows: list[list[Fraction]] = []
    rhs: list[Fraction] = []
    by_buyer: dict[int, list[int]] = {}
    for i, j in subset:
        by_buyer.setdefault(i, []).append(j)
    for i, goods in by_buyer.items():
        goods.sort()
        for j in goods[1:]:
            row = [Fraction(0)] * n
            row[j] += u[i][goods[0]]
            row[goods[0]] -= u[i][j]
            rows.append(row)
            rhs.append(Fraction(0))
    for tree in trees:
        if budgets is None and n in tree:
            continue  # redundant: the money balances sum to zero
        row = [Fraction(0)] * n
        money = Fraction(0)
        for v in tree:
            if v >= n:
                row[v - n] += 1
            elif budgets is None:
                row[v] -= 1
            else:
                money += Fraction(budgets[v])
        rows.append(row)
        rhs.append(money)
    if budgets is None:
        row = [Fraction(0)] * n
        row[0] = Fraction(1)
        rows.append(row)
        rhs.append(Fraction(1))
    return rows, rhs


def balanced_qp(net: EqualityNetwork, keep_sold: Iterable[int] = ()) -> tuple[float, dict[tuple[int, int], float]]:
    """Numerically minimal surplus 2-norm over all maximum flows.

    A convex QP over the edge flows with the flow value pinned to the exact
    maximum, solved by an interior point method.  Goods in ``keep_sold`` are
    constrained to be completely sold.  Returns the norm and the flows in the
    network's own units (capacities divided by ``scale``).
    """
    nb, ng = net.n, net.n_goods
    if nb > 6:
        raise OracleTooLarge("QP oracle limited to n <= 6")
    edges = list(net.edges)
    norm = max(max(net.source_caps, default=1), max(net.sink_caps, default=1), 1)
    src = np.array([c / norm for c in net.source_caps], dtype=float)
    snk = np.array([c / norm for c in net.sink_caps], dtype=float)
    F = float(reference_max_flow(net) * net.scale / norm)
    if not edges:
        return float(np.linalg.norm(src)) * norm / net.scale, {}
    m = len(edges)
    out_m = np.zeros((nb, m))
    in_m = np.zeros((ng, m))
    for k, (i, j) in enumerate(edges):
        out_m[i, k] = 1.0
        in_m[j, k] = 1.0
    x = cp.Variable(m)
    constraints = [x >= 0, out_m @ x <= src, in_m @ x <= snk, cp.sum(x) == F]
    keep = sorted(set(keep_sold))
    if keep:
        constraints.append(in_m[keep] @ x == snk[keep])
    problem = cp.Problem(cp.Minimize(cp.sum_squares(src - out_m @ x)), constraints)
    problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    if x.value is None:
        raise RuntimeError(f"QP oracle failed: {problem.status}")
    xv = np.maximum(x.value, 0.0)
    r = src - out_m @ xv
    value = float(np.sqrt(max(float(r @ r), 0.0))) * norm / net.scale
    flows = {e: float(v) * norm / net.scale for e, v in zip(edges, xv)}
    return value, flows


def brute_force_cycles(support: Sequence[Sequence[bool]]) -> Iterator[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Alternating cycles ``(buyers, goods)`` by enumerating ordered buyer and good tuples."""
    n = len(support)
    m = len(support[0]) if n else 0
    for k in range(2, min(n, m) + 1):
        for buyers in permutations(range(n), k):
            if buyers[0] != min(buyers):
                continue
            for goods in permutations(range(m), k):
                if all(support[buyers[t]][goods[t]] and support[buyers[(t + 1) % k]][goods[t]] for t in range(k)):
                    yield buyers, goods


def brute_force_degenerate(u: Sequence[Sequence[int]]) -> bool:
    """Whether some alternating cycle has equal utility products on its two edge classes."""
    support = [[x > 0 for x in row] for row in u]
    for buyers, goods in brute_force_cycles(support):
        k = len(buyers)
        left = right = 1
        for t in range(k):
            left *= u[buyers[t]][goods[t]]
            right *= u[buyers[(t + 1) % k]][goods[t]]
        if left == right:
            return True
    return False
