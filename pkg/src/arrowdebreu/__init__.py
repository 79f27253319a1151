"""Exact equilibrium prices for linear Arrow-Debreu and Fisher markets."""

from .exactnum import PowValue, SolverConfig, make_config
from .extraction import EquilibriumCertificate, verify_equilibrium
from .market import MarketInstance, fisher_to_ad, perturb, validate
from .pipeline import SolveOutcome, solve, solve_fisher

__all__ = [
    "PowValue",
    "SolverConfig",
    "make_config",
    "MarketInstance",
    "validate",
    "perturb",
    "fisher_to_ad",
    "EquilibriumCertificate",
    "verify_equilibrium",
    "SolveOutcome",
    "solve",
    "solve_fisher",
]

__version__ = "0.1.0"
