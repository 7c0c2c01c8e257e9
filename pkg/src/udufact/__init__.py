"""Constrained low-rank factorization: solvers, diagnostics, networks, CLI."""

from . import linops, problem_gen, spectra, solvers, udv
from .estimators import LowRankRecovery, UdvRegressor
from .solvers import (
    FactorState,
    SolverConfig,
    project_diag_nonneg,
    project_fro_ball,
    reconstruct,
    run_solver,
)

__all__ = [
    "linops",
    "problem_gen",
    "spectra",
    "solvers",
    "udv",
    "LowRankRecovery",
    "UdvRegressor",
    "FactorState",
    "SolverConfig",
    "project_diag_nonneg",
    "project_fro_ball",
    "reconstruct",
    "run_solver",
]

__version__ = "0.1.0"
