"""Command line: ``gen``, ``solve``, ``verify`` and ``oracle``.

Exit codes:

* 0 success (certificate passes, oracle agrees)
* 1 certificate fails or oracle disagrees
* 2 usage error
* 3 invalid or malformed input
* 4 phase cap exceeded
* 5 extraction failed
* 6 invariant violation or other solver failure
* 7 instance too large for the oracle
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from . import fileio
from .extraction import ExtractionError, verify_equilibrium
from .market import InvalidInstance, MarketInstance, validate
from .oracle import OracleTooLarge, enumerate_equilibrium
from .pipeline import SolveOutcome, solve, solve_fisher
from .solver import InvariantViolation, PhaseCapExceeded, SolverError

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_PHASE_CAP = 4
EXIT_EXTRACTION = 5
EXIT_SOLVER = 6
EXIT_TOO_LARGE = 7

log = logging.getLogger("arrowdebreu")


@dataclass
class RunReport:
    digest: str
    phases: dict[str, int]
    terminal_surplus: Fraction
    status: str
    prices: tuple[Fraction, ...]
    seconds: float

    def to_json(self) -> dict:
        return {
            "instance": self.digest,
            "phases": sum(self.phases.values()),
            "phases_by_kind": self.phases,
            "terminal_surplus": fileio.format_rational(self.terminal_surplus),
            "status": self.status,
            "prices": [fileio.format_rational(p) for p in self.prices],
            "seconds": round(self.seconds, 3),
        }


def _report(inst: MarketInstance, out: SolveOutcome) -> RunReport:
    kinds = {"xmax": 0, "balancing": 0}
    for rec in out.trace:
        kinds[rec.phase_kind] += 1
    return RunReport(
        digest=fileio.instance_digest(inst),
        phases=kinds,
        terminal_surplus=out.part_a.total_surplus,
        status="pass" if out.certificate.passed else "fail",
        prices=out.certificate.prices,
        seconds=out.seconds,
    )


def _random_instance(rng: random.Random, n: int, U: int, fisher: bool) -> MarketInstance:
    while True:
        if n == 1:
            u = [[rng.randint(1, U)]]
        else:
            u = [[0 if rng.random() < 0.3 else rng.randint(1, U) for _ in range(n)] for _ in range(n)]
        budgets = None
        if fisher:
            budgets = tuple(Fraction(rng.randint(1, 10), rng.randint(1, 3)) for _ in range(n))
        inst = MarketInstance.from_rows(u, U=U, fisher_budgets=budgets)
        if validate(inst, fisher=fisher) is None:
            return inst


def generate(n: int, U: int, seed: int, count: int, fisher: bool = False) -> list[MarketInstance]:
    """``count`` distinct valid random instances, reproducible from ``seed``."""
    if n < 1 or U < 1 or count < 1:
        raise ValueError("n, U and count must be positive")
    rng = random.Random(seed)
    seen: set[str] = set()
    out: list[MarketInstance] = []
    misses = 0
    while len(out) < count:
        inst = _random_instance(rng, n, U, fisher)
        text = fileio.dump_instance(inst)
        if text in seen:
            misses += 1
            if misses > 1000 * count:
                raise ValueError(f"cannot draw {count} distinct instances with n={n}, U={U}")
            continue
        seen.add(text)
        out.append(inst)
    return out


def cmd_gen(args: argparse.Namespace) -> int:
    try:
        insts = generate(args.n, args.U, args.seed, args.count, args.fisher)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.output is None:
        if len(insts) != 1:
            print("error: --output directory required when --count > 1", file=sys.stderr)
            return EXIT_USAGE
        sys.stdout.write(fileio.dump_instance(insts[0]))
        return EXIT_OK
    target = Path(args.output)
    if len(insts) == 1 and target.suffix:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(fileio.dump_instance(insts[0]))
        return EXIT_OK
    target.mkdir(parents=True, exist_ok=True)
    for k, inst in enumerate(insts):
        (target / f"inst_{k:04d}.txt").write_text(fileio.dump_instance(inst))
    return EXIT_OK


def _load(path: str) -> MarketInstance:
    return fileio.load_instance(Path(path).read_text())


def _solve_one(path: str, fisher: bool, multiplier: float, check: bool) -> tuple[int, str, str | None, SolveOutcome | None]:
    """Solve one file; returns (exit code, message or report JSON, certificate text, outcome)."""
    try:
        inst = _load(path)
        if fisher:
            if inst.fisher_budgets is None:
                return EXIT_INPUT, f"{path}: --fisher needs a fisher_budgets line", None, None
            out = solve_fisher(inst.fisher_budgets, inst.u, phase_cap_multiplier=multiplier, check_invariants=check)
        else:
            out = solve(inst, phase_cap_multiplier=multiplier, check_invariants=check)
    except (fileio.FormatError, InvalidInstance, OSError) as exc:
        return EXIT_INPUT, f"{path}: {exc}", None, None
    except PhaseCapExceeded as exc:
        return EXIT_PHASE_CAP, f"{path}: {exc}", None, None
    except ExtractionError as exc:
        return EXIT_EXTRACTION, f"{path}: {exc}", None, None
    except (InvariantViolation, SolverError) as exc:
        return EXIT_SOLVER, f"{path}: {exc}", None, None
    report = _report(out.instance, out)
    code = EXIT_OK if out.certificate.passed else EXIT_FAIL
    return code, json.dumps({"input": path, **report.to_json()}), fileio.dump_certificate(out.certificate), out


def _solve_worker(job: tuple[str, bool, float, bool]) -> tuple[int, str, str | None]:
    code, msg, cert, _ = _solve_one(*job)
    return code, msg, cert


def cmd_solve(args: argparse.Namespace) -> int:
    paths = args.input
    if len(paths) > 1 and args.trace:
        print("error: --trace supports a single input", file=sys.stderr)
        return EXIT_USAGE
    check = not args.no_invariants
    worst = EXIT_OK
    if len(paths) == 1:
        code, msg, cert, out = _solve_one(paths[0], args.fisher, args.phase_cap_multiplier, check)
        results = [(code, msg, cert)]
        if out is not None and args.trace:
            with open(args.trace, "w", newline="") as fh:
                fileio.write_trace(out.trace, fh)
    else:
        jobs = [(p, args.fisher, args.phase_cap_multiplier, check) for p in paths]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_solve_worker, jobs))
        else:
            results = [_solve_worker(j) for j in jobs]
    for path, (code, msg, cert) in zip(paths, results):
        if cert is None:
            print(f"error: {msg}", file=sys.stderr)
        else:
            print(msg)
            if args.output:
                target = Path(args.output)
                if len(paths) > 1:
                    target.mkdir(parents=True, exist_ok=True)
                    target = target / (Path(path).stem + ".cert")
                target.write_text(cert)
        worst = max(worst, code)
    return worst


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        inst = _load(args.input[0])
        prices = fileio.load_prices(Path(args.prices).read_text())
        budgets = inst.fisher_budgets if args.fisher else None
        if args.fisher and budgets is None:
            raise fileio.FormatError("--fisher needs a fisher_budgets line")
        cert = verify_equilibrium(inst, prices, budgets=budgets)
    except (fileio.FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = fileio.dump_certificate(cert)
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if cert.passed else EXIT_FAIL


def _normalized(p: Sequence[Fraction]) -> tuple[Fraction, ...]:
    low = min(p)
    return tuple(Fraction(x) / low for x in p)


def cmd_oracle(args: argparse.Namespace) -> int:
    path = args.input[0]
    try:
        inst = _load(path)
        if inst.n > args.max_n_oracle:
            raise OracleTooLarge(f"n={inst.n} exceeds --max-n-oracle {args.max_n_oracle}")
        budgets = inst.fisher_budgets if args.fisher else None
        survivors = enumerate_equilibrium(inst.u, budgets=budgets, max_n=args.max_n_oracle)
    except OracleTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except (fileio.FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    code, msg, _cert, out = _solve_one(path, args.fisher, args.phase_cap_multiplier, not args.no_invariants)
    if out is None:
        print(f"error: {msg}", file=sys.stderr)
        return code
    solver_p = _normalized(out.prices)
    agree = solver_p in survivors
    print(
        json.dumps(
            {
                "input": path,
                "solver": [fileio.format_rational(x) for x in solver_p],
                "oracle": [[fileio.format_rational(x) for x in s] for s in survivors],
                "agree": agree,
            }
        )
    )
    return EXIT_OK if agree and code == EXIT_OK else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arrowdebreu", description="Exact linear Arrow-Debreu and Fisher market equilibria.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write random valid instances")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--U", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--fisher", action="store_true", help="add random Fisher budgets")
    g.add_argument("--output", help="file (count 1) or directory")
    g.set_defaults(func=cmd_gen)

    def solver_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--fisher", action="store_true", help="treat the instance as a Fisher market with its budgets")
        p.add_argument("--phase-cap-multiplier", type=float, default=10**6)
        p.add_argument("--no-invariants", action="store_true", help="skip per-phase invariant checks")

    s = sub.add_parser("solve", help="compute an exact equilibrium")
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--output", help="certificate file (directory for several inputs)")
    s.add_argument("--trace", help="CSV file for per-phase records")
    s.add_argument("--jobs", type=int, default=1)
    solver_flags(s)
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="check candidate prices")
    v.add_argument("--input", nargs=1, required=True)
    v.add_argument("--prices", required=True)
    v.add_argument("--output")
    v.add_argument("--fisher", action="store_true")
    v.set_defaults(func=cmd_verify)

    o = sub.add_parser("oracle", help="compare the solver with support enumeration")
    o.add_argument("--input", nargs=1, required=True)
    o.add_argument("--max-n-oracle", type=int, default=4)
    solver_flags(o)
    o.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    code = args.func(args)
    log.debug("%s finished in %.2fs with exit code %d", args.command, time.perf_counter() - t0, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
