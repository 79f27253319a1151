"""End-to-end solves: perturb, run the phase loop, extract and verify."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .extraction import EquilibriumCertificate, ExtractionError, run_part_b, verify_equilibrium
from .market import FisherReduction, InvalidInstance, MarketInstance, fisher_to_ad, perturb, validate
from .solver import PartAResult, PhasePlan, PhaseTrace, run_part_a

__all__ = ["SolveOutcome", "solve", "solve_fisher"]


@dataclass
class SolveOutcome:
    instance: MarketInstance
    certificate: EquilibriumCertificate
    part_a: PartAResult
    seconds: float
    reduction: FisherReduction | None = field(default=None, repr=False)

    @property
    def prices(self) -> tuple[Fraction, ...]:
        return self.certificate.prices

    @property
    def trace(self) -> list[PhaseTrace]:
        return self.part_a.trace


def solve(
    inst: MarketInstance,
    *,
    phase_cap_multiplier: float = 10**6,
    check_invariants: bool = True,
    on_phase: Callable[[PhaseTrace, PhasePlan], None] | None = None,
) -> SolveOutcome:
    """Exact equilibrium of an Arrow-Debreu market; prices normalized to minimum one."""
    violation = validate(inst)
    if violation is not None:
        raise InvalidInstance(violation)
    t0 = time.perf_counter()
    part_a = run_part_a(
        perturb(inst),
        phase_cap_multiplier=phase_cap_multiplier,
        check_invariants=check_invariants,
        on_phase=on_phase,
    )
    cert = run_part_b(part_a, inst)
    return SolveOutcome(inst, cert, part_a, time.perf_counter() - t0)


def solve_fisher(
    budgets: Sequence[Fraction],
    u: Sequence[Sequence[int]],
    **kwargs,
) -> SolveOutcome:
    """Exact Fisher equilibrium; prices sum to the total budget."""
    reduction = fisher_to_ad(budgets, u)
    t0 = time.perf_counter()
    inner = solve(reduction.market, **kwargs)
    prices = reduction.fisher_prices(inner.prices)
    fisher_inst = MarketInstance.from_rows(u, U=max(1, max(max(r) for r in u)), fisher_budgets=budgets)
    cert = verify_equilibrium(fisher_inst, prices, budgets=reduction.budgets)
    if not cert.passed:
        raise ExtractionError("back-mapped Fisher prices fail verification", cert)
    return SolveOutcome(fisher_inst, cert, inner.part_a, time.perf_counter() - t0, reduction)
