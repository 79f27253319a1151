"""Exact scalar machinery for the phase algorithm.

Prices and rounded utilities are powers ``(1+1/L)^a * (1+1/L')^(b*eps)`` for a
symbolic infinitesimal ``eps``; they are stored as integer exponent pairs
(:class:`PowValue`).  The solver never needs the real value of such a power
except through a rational approximation with denominator ``L`` (``p_hat``),
which :class:`PowerTable` produces with rigorously tracked truncation error.

Exact rationals are :class:`fractions.Fraction` throughout.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

__all__ = [
    "PowValue",
    "ONE",
    "lex_cmp",
    "pow_mul",
    "pow_div",
    "PowerTable",
    "SolverConfig",
    "make_config",
    "pow_approx",
    "round_to_power",
    "exponent_of",
    "sieve_primes",
    "pow_exact",
    "C_DEFAULT",
]

# Smallest integer >= 48 e^2 (about 354.67); keeps the step constant rational.
C_DEFAULT = Fraction(355)


class PowValue(NamedTuple):
    """The quantity ``(1+1/L)^a * (1+1/L')^(b*eps)``.

    Tuple ordering is exactly the order of the denoted reals for all
    sufficiently small ``eps > 0``: the real exponent dominates and the
    infinitesimal exponent breaks ties.
    """

    a: int
    b: int = 0

    def __mul__(self, other: PowValue) -> PowValue:  # type: ignore[override]
        return PowValue(self.a + other.a, self.b + other.b)

    def __truediv__(self, other: PowValue) -> PowValue:
        return PowValue(self.a - other.a, self.b - other.b)


ONE = PowValue(0, 0)


def lex_cmp(x: PowValue, y: PowValue) -> int:
    """Return -1, 0 or 1 as ``x`` is less than, equal to or greater than ``y``."""
    if x == y:
        return 0
    return -1 if (x.a, x.b) < (y.a, y.b) else 1


def pow_mul(x: PowValue, y: PowValue) -> PowValue:
    return PowValue(x.a + y.a, x.b + y.b)


def pow_div(x: PowValue, y: PowValue) -> PowValue:
    return PowValue(x.a - y.a, x.b - y.b)


def pow_exact(g: int, base: int) -> Fraction:
    """``(1+1/base)^g`` as an exact fraction.  Only sensible for small ``g``."""
    return Fraction(base + 1, base) ** g


def sieve_primes(bound: int) -> list[int]:
    """All primes ``<= bound`` in ascending order (sieve of Eratosthenes)."""
    if bound < 2:
        raise ValueError(f"sieve bound must be at least 2, got {bound}")
    flags = bytearray([1]) * (bound + 1)
    flags[0] = flags[1] = 0
    for p in range(2, math.isqrt(bound) + 1):
        if flags[p]:
            flags[p * p :: p] = bytearray(len(range(p * p, bound + 1, p)))
    return [i for i, f in enumerate(flags) if f]


# Digits of the windowed exponentiation: exponents are written in base 2**_W.
_W = 8
_RADIX = 1 << _W


class PowerTable:
    """Truncated powers of ``1 + 1/base`` with certified error bounds.

    Intermediate values are integers ``V`` standing for ``V / base**3``.  Every
    value carries an error count ``E``: the true power ``t`` satisfies
    ``V <= t * base**3`` and ``t * base**3 * (1 - E/base**3) <= V``.  Products
    are floored, so each multiplication adds one unit to the count.  The table
    holds ``(1+1/base)^(v * 256^d)`` for every digit position ``d`` and digit
    ``v``, so any exponent costs one multiplication per base-256 digit.
    """

    def __init__(self, base: int, max_exponent: int):
        if base < 2:
            raise ValueError("base must be at least 2")
        self.base = base
        self.den = base**3
        self.max_exponent = max_exponent
        ndigits = max(1, -(-max_exponent.bit_length() // _W))
        den = self.den
        rows: list[list[tuple[int, int]]] = []
        unit = ((base + 1) * base * base, 0)  # (1+1/base)^1 exactly
        for _ in range(ndigits):
            row = [(den, 0), unit]
            for _v in range(2, _RADIX):
                pv, pe = row[-1]
                row.append((pv * unit[0] // den, pe + unit[1] + 1))
            rows.append(row)
            # next digit's unit is unit**256, by eight squarings
            uv, ue = unit
            for _s in range(_W):
                uv, ue = uv * uv // den, 2 * ue + 1
            unit = (uv, ue)
        self._rows = rows
        self._log_step = math.log1p(1.0 / base)

    def value(self, g: int) -> tuple[int, int]:
        """Truncated ``(1+1/base)^g`` as ``(V, E)`` over denominator ``base**3``."""
        if g < 0:
            raise ValueError("negative exponent")
        den = self.den
        v, e = den, 0
        d = 0
        while g:
            digit = g & (_RADIX - 1)
            if digit:
                if d >= len(self._rows):
                    raise ValueError("exponent beyond table range")
                tv, te = self._rows[d][digit]
                v = v * tv // den
                e += te + 1
            g >>= _W
            d += 1
        return v, e

    def bounds(self, g: int) -> tuple[int, int]:
        """Integers ``lo <= t*base**3 <= hi`` enclosing the true power ``t``."""
        v, e = self.value(g)
        den = self.den
        if e >= den:
            raise ArithmeticError("truncation error exceeded the representable bound")
        hi = -(-v * den // (den - e))
        return v, hi

    def approx(self, g: int) -> int:
        """Numerator ``P`` of the denominator-``base`` approximation ``P/base``.

        Guarantees ``|P/base - (1+1/base)^g| < 3/(4 base)``, which gives both the
        additive ``1/base`` and the multiplicative ``1+1/base`` contract.
        """
        lo, hi = self.bounds(g)
        sq = self.base * self.base
        if 4 * (hi - lo) >= sq:
            raise ArithmeticError("power approximation lost its precision guarantee")
        # nearest multiple of base**2 to lo, halves rounded up
        return (2 * lo + sq) // (2 * sq)

    def floor_exponent(self, num: int, den: int) -> int:
        """Largest ``g`` found with certified ``(1+1/base)^g <= num/den``.

        The result may fall one short of the true floor when the target sits
        within truncation error of a power; callers only rely on the upper
        certificate and on being within a factor ``(1+1/base)^2`` of the floor.
        """
        if num < den:
            raise ValueError("target below one")
        scale = self.den
        # float estimate of the exponent, then exact correction steps
        g = max(0, int(_log_ratio(num, den) / self._log_step))
        g = min(g, self.max_exponent)
        for _ in range(4):
            lo, _hi = self.bounds(g)
            delta = _log_ratio(num * scale, den * lo)
            step = int(delta / self._log_step)
            if step == 0:
                break
            g = min(max(0, g + step), self.max_exponent)
        while g > 0 and self.bounds(g)[1] * den > num * scale:
            g -= 1
        while g < self.max_exponent and self.bounds(g + 1)[1] * den <= num * scale:
            g += 1
        return g

    def nearest_exponent(self, num: int, den: int) -> int:
        """Exponent ``g`` with ``(1+1/base)^g`` within a factor ``1+1/base`` of ``num/den``."""
        g = self.floor_exponent(num, den)
        lo, hi = self.bounds(g)
        scale = self.den
        # upper power is nearer (geometrically) iff x^2 > V_g^2 (1+1/base)
        # test with the upper bound of V_g so the decision is certified
        x2 = num * num * scale * scale * self.base
        if g < self.max_exponent and x2 > hi * hi * (self.base + 1) * den * den:
            g += 1
        return g

    def ceil_exponent(self, num: int, den: int) -> int:
        """Smallest ``g`` with certified ``(1+1/base)^g >= num/den``."""
        g = self.floor_exponent(num, den)
        while self.bounds(g)[0] * den < num * self.den:
            if g >= self.max_exponent:
                raise ValueError("target beyond table range")
            g += 1
        while g > 0 and self.bounds(g - 1)[0] * den >= num * self.den:
            g -= 1
        return g


def _log_ratio(num: int, den: int) -> float:
    """Natural log of ``num/den`` for positive integers of any size, to float accuracy."""
    if num <= 0 or den <= 0:
        raise ValueError("log of nonpositive value")
    # ln(num/den) = ln(1 + (num-den)/den) keeps precision for x near 1
    diff = num - den
    if abs(diff) * 4 < den:
        return math.log1p(diff / den)
    return math.log(num) - math.log(den)


@dataclass(frozen=True)
class SolverConfig:
    """Size-dependent constants of one solve."""

    n: int
    U: int
    L: int
    Lprime: int
    Q: int
    K: int
    epsilon: Fraction
    C: Fraction = C_DEFAULT
    primes: tuple[int, ...] = field(default=(), repr=False)

    @property
    def table(self) -> PowerTable:
        return self.table_for(self.L)

    def table_for(self, base: int) -> PowerTable:
        # exponents of x-quantities may exceed K; leave headroom
        return shared_table(base, max(self.K, 1) * 4 + 64)


def _log2_ceil(n: int) -> int:
    return (n - 1).bit_length() if n > 1 else 0


def make_config(n: int, U: int, edges_needed: int | None = None, C: Fraction = C_DEFAULT) -> SolverConfig:
    """Build the constants for an ``n``-agent market with utilities in ``[0, U]``.

    ``edges_needed`` is the number of distinct primes the perturbation must
    hand out; the prime bound doubles until enough primes exist.
    """
    if n < 1 or U < 1:
        raise ValueError("n and U must be positive")
    if edges_needed is None:
        edges_needed = n * n
    L = 128 * n ** (5 * n + 5) * U ** (4 * n)
    Q = max(2, 8 * n * n * _log2_ceil(n))
    primes = sieve_primes(Q)
    while len(primes) < edges_needed:
        Q *= 2
        primes = sieve_primes(Q)
    Lprime = 8 * n * Q ** (2 * n)
    epsilon = Fraction(1, 8 * n ** (4 * n) * U ** (3 * n))
    cfg = SolverConfig(n=n, U=U, L=L, Lprime=Lprime, Q=Q, K=0, epsilon=epsilon, C=Fraction(C), primes=tuple(primes))
    # K: minimal with (nU)^n <= (1+1/L)^K; built with a provisional table
    target = (n * U) ** n
    K = shared_table(L, _provisional_limit(L, target)).ceil_exponent(target, 1)
    object.__setattr__(cfg, "K", K)
    return cfg


def _provisional_limit(base: int, target: int) -> int:
    # float estimate of base*ln(target) is loose in its low bits; double it
    return 2 * int(math.log(target) * (base + 1)) + 1024 if target > 1 else 1024


def pow_approx(a: int, cfg: SolverConfig) -> Fraction:
    """Rational with denominator ``L`` approximating ``(1+1/L)^a``."""
    if a < 0 or a > cfg.K:
        raise ValueError(f"exponent {a} outside [0, {cfg.K}]")
    return Fraction(cfg.table.approx(a), cfg.L)


def round_to_power(xhat: Fraction, cfg: SolverConfig) -> int:
    """Exponent ``g`` such that ``(1+1/L)^g`` approximates ``xhat`` within ``1+1/L``."""
    xhat = Fraction(xhat)
    if xhat < 1:
        raise ValueError("round_to_power needs xhat >= 1")
    return cfg.table.nearest_exponent(xhat.numerator, xhat.denominator)


_TABLES: dict[int, PowerTable] = {}
_TABLES_LOCK = threading.Lock()


def shared_table(base: int, max_exponent: int) -> PowerTable:
    """Process-wide :class:`PowerTable` for ``base`` covering ``max_exponent``."""
    table = _TABLES.get(base)
    if table is None or table.max_exponent < max_exponent:
        with _TABLES_LOCK:
            table = _TABLES.get(base)
            if table is None or table.max_exponent < max_exponent:
                table = PowerTable(base, max_exponent)
                _TABLES[base] = table
    return table


def exponent_of(v: int, base_L: int) -> int:
    """Exponent ``e`` with ``(1+1/base_L)^e`` approximating the integer ``v`` within ``1+1/base_L``."""
    if v < 1:
        raise ValueError("exponent_of needs v >= 1")
    if v == 1:
        return 0
    return shared_table(base_L, _provisional_limit(base_L, v)).nearest_exponent(v, 1)
