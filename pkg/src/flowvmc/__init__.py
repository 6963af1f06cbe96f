"""Variational Monte Carlo with normalizing-flow wavefunctions."""

from .errors import (
    DivergedError,
    DomainError,
    FlowVMCError,
    MissingFieldError,
    NonFiniteError,
    NotSPDError,
    SingularError,
)
from .flow import FlowModel, FlowSpec, SymmetrizedFlow, load_checkpoint
from .gaussian import GaussianState, gaussian_energy_analytic, optimize_gaussian
from .hamiltonian import QuarticHamiltonian, oscillator, random_hamiltonian
from .numerics import RngStream
from .optimize import OptimizerConfig, train

__all__ = [
    "DivergedError",
    "DomainError",
    "FlowModel",
    "FlowSpec",
    "FlowVMCError",
    "GaussianState",
    "MissingFieldError",
    "NonFiniteError",
    "NotSPDError",
    "OptimizerConfig",
    "QuarticHamiltonian",
    "RngStream",
    "SingularError",
    "SymmetrizedFlow",
    "gaussian_energy_analytic",
    "load_checkpoint",
    "optimize_gaussian",
    "oscillator",
    "random_hamiltonian",
    "train",
]
