"""Splitting schemes, sensitivities and ergodic statistics for the stochastic Allen-Cahn equation."""

from .integrators import RunConfig, Scheme, Trajectory, run, run_coupled_pair, simulate
from .noise_model import CovarianceSpec, ExplicitCovariance, check_regularity
from .scalar_dynamics import FlowParams, OddPolynomial
from .spectral_core import BC, DomainSpec, SpectralField, build_domain

__all__ = [
    "BC",
    "DomainSpec",
    "SpectralField",
    "build_domain",
    "CovarianceSpec",
    "ExplicitCovariance",
    "check_regularity",
    "FlowParams",
    "OddPolynomial",
    "RunConfig",
    "Scheme",
    "Trajectory",
    "run",
    "run_coupled_pair",
    "simulate",
]

__version__ = "0.1.0"
