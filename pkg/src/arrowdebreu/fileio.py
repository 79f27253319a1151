"""Line-oriented text formats with exact ``p/q`` rationals.

Instance::

    n 2
    U 10
    utilities
    2 1
    2 1
    fisher_budgets 2/1 1/1

Prices files hold ``n`` and a ``prices`` line; certificates add the verdicts
and the allocation matrix.  Blank lines and ``#`` comments are ignored.
Writers emit a canonical form, so ``dump(load(text)) == text`` for canonical
input.
"""

from __future__ import annotations

import csv
import hashlib
from fractions import Fraction
from typing import IO, Iterable, Sequence

from .extraction import EquilibriumCertificate
from .market import MarketInstance
from .solver import PhaseTrace

__all__ = [
    "FormatError",
    "format_rational",
    "parse_rational",
    "dump_instance",
    "load_instance",
    "dump_prices",
    "load_prices",
    "dump_certificate",
    "load_certificate",
    "instance_digest",
    "write_trace",
    "TRACE_FIELDS",
]


class FormatError(ValueError):
    pass


def format_rational(x: Fraction | int) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def parse_rational(text: str) -> Fraction:
    try:
        if "/" in text:
            num, den = text.split("/")
            if int(den) <= 0:
                raise FormatError(f"nonpositive denominator in {text!r}")
            return Fraction(int(num), int(den))
        return Fraction(int(text))
    except (ValueError, ZeroDivisionError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"not an exact rational: {text!r}") from exc


def _lines(text: str) -> list[list[str]]:
    out = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(line.split())
    return out


def _int(tok: str, what: str) -> int:
    try:
        return int(tok)
    except ValueError as exc:
        raise FormatError(f"{what} must be an integer, got {tok!r}") from exc


def dump_instance(inst: MarketInstance) -> str:
    lines = [f"n {inst.n}", f"U {inst.U}", "utilities"]
    lines += [" ".join(str(x) for x in row) for row in inst.u]
    if inst.fisher_budgets is not None:
        lines.append("fisher_budgets " + " ".join(format_rational(b) for b in inst.fisher_budgets))
    return "\n".join(lines) + "\n"


def load_instance(text: str) -> MarketInstance:
    rows = _lines(text)
    fields: dict[str, list[str]] = {}
    matrix: list[list[int]] = []
    k = 0
    while k < len(rows):
        key, rest = rows[k][0], rows[k][1:]
        if key == "utilities":
            n = _int(fields.get("n", [""])[0], "n") if "n" in fields else None
            if n is None:
                raise FormatError("'n' must precede 'utilities'")
            for r in range(n):
                if k + 1 + r >= len(rows):
                    raise FormatError("utility matrix is truncated")
                matrix.append([_int(t, "utility") for t in rows[k + 1 + r]])
            k += n + 1
            continue
        if key in fields:
            raise FormatError(f"duplicate field {key!r}")
        if key not in ("n", "U", "fisher_budgets"):
            raise FormatError(f"unknown field {key!r}")
        fields[key] = rest
        k += 1
    for req in ("n", "U"):
        if req not in fields or len(fields[req]) != 1:
            raise FormatError(f"missing or malformed field {req!r}")
    n = _int(fields["n"][0], "n")
    U = _int(fields["U"][0], "U")
    if len(matrix) != n or any(len(r) != n for r in matrix):
        raise FormatError("utility matrix must be n rows of n integers")
    budgets = None
    if "fisher_budgets" in fields:
        budgets = tuple(parse_rational(t) for t in fields["fisher_budgets"])
        if len(budgets) != n:
            raise FormatError("fisher_budgets needs one rational per buyer")
    return MarketInstance(tuple(tuple(r) for r in matrix), U, budgets)


def instance_digest(inst: MarketInstance) -> str:
    return hashlib.sha256(dump_instance(inst).encode()).hexdigest()[:16]


def dump_prices(prices: Sequence[Fraction]) -> str:
    return f"n {len(prices)}\nprices " + " ".join(format_rational(p) for p in prices) + "\n"


def load_prices(text: str) -> list[Fraction]:
    fields = {row[0]: row[1:] for row in _lines(text)}
    if "prices" not in fields:
        raise FormatError("missing 'prices' line")
    prices = [parse_rational(t) for t in fields["prices"]]
    if "n" in fields and len(fields["n"]) == 1 and _int(fields["n"][0], "n") != len(prices):
        raise FormatError("price count does not match n")
    return prices


def _flag(b: bool) -> str:
    return "true" if b else "false"


def dump_certificate(cert: EquilibriumCertificate) -> str:
    n = len(cert.prices)
    lines = [
        f"status {'pass' if cert.passed else 'fail'}",
        f"n {n}",
        "prices " + " ".join(format_rational(p) for p in cert.prices),
    ]
    if cert.budgets is not None:
        lines.append("budgets " + " ".join(format_rational(b) for b in cert.budgets))
    lines += [
        f"goods_sold {_flag(cert.goods_sold)}",
        f"money_spent {_flag(cert.money_spent)}",
        f"max_bang_per_buck {_flag(cert.max_bang_per_buck)}",
        "allocation",
    ]
    lines += [" ".join(format_rational(x) for x in row) for row in cert.allocation]
    return "\n".join(lines) + "\n"


def load_certificate(text: str) -> EquilibriumCertificate:
    rows = _lines(text)
    fields: dict[str, list[str]] = {}
    alloc: list[list[Fraction]] = []
    for k, row in enumerate(rows):
        if row[0] == "allocation":
            n = _int(fields["n"][0], "n")
            alloc = [[parse_rational(t) for t in r] for r in rows[k + 1 : k + 1 + n]]
            break
        fields[row[0]] = row[1:]

    def flag(name: str) -> bool:
        value = fields.get(name, [""])[0]
        if value not in ("true", "false"):
            raise FormatError(f"missing or malformed flag {name!r}")
        return value == "true"

    budgets = tuple(parse_rational(t) for t in fields["budgets"]) if "budgets" in fields else None
    return EquilibriumCertificate(
        prices=tuple(parse_rational(t) for t in fields["prices"]),
        allocation=tuple(tuple(r) for r in alloc),
        goods_sold=flag("goods_sold"),
        money_spent=flag("money_spent"),
        max_bang_per_buck=flag("max_bang_per_buck"),
        budgets=budgets,
    )


TRACE_FIELDS = (
    "phase",
    "kind",
    "type3",
    "k",
    "x_a",
    "x_b",
    "sum_a",
    "norm2_approx",
    "norm2_digest",
    "total_surplus",
)


def write_trace(records: Iterable[PhaseTrace], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRACE_FIELDS)
    for rec in records:
        norm2 = rec.norm2
        digest = hashlib.sha256(format_rational(norm2).encode()).hexdigest()[:12]
        writer.writerow(
            [
                rec.index,
                rec.phase_kind,
                int(rec.type3),
                rec.k,
                rec.x.a,
                rec.x.b,
                rec.potential,
                f"{float(norm2):.17g}",
                digest,
                format_rational(rec.total_surplus),
            ]
        )
