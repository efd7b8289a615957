"""Diagonal Q-Wiener noise in the eigenbasis of A.

The covariance eigenvalues follow ``q_j = min(cap, (lam_j + lam)^(-s))``.
Because Q commutes with A, the stochastic convolution over a step is a
vector of independent Ornstein-Uhlenbeck increments and can be sampled
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral_core import DomainSpec, SpectralField

__all__ = [
    "CovarianceSpec",
    "RegularityReport",
    "check_regularity",
    "convolution_variance",
    "sample_convolution_increment",
    "sample_plain_increment",
    "refine_convolution_increments",
    "aggregate_convolution",
]


@dataclass(frozen=True)
class CovarianceSpec:
    decay_exponent: float = 1.0
    cap: float = 1.0
    beta_target: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.decay_exponent <= 1.0:
            raise ValueError(f"decay exponent s must lie in [0, 1], got {self.decay_exponent}")
        if self.cap <= 0:
            raise ValueError(f"cap must be positive, got {self.cap}")
        if not 0.0 < self.beta_target <= 2.0:
            raise ValueError(f"beta_target must lie in (0, 2], got {self.beta_target}")

    def eigenvalues(self, domain: DomainSpec) -> np.ndarray:
        return np.minimum(self.cap, domain.shifted ** (-self.decay_exponent))


@dataclass(frozen=True)
class ExplicitCovariance:
    """Covariance given directly by its eigenvalues (used for degenerate or zero noise)."""

    q: tuple
    beta_target: float = 1.0
    decay_exponent: float = float("nan")

    def eigenvalues(self, domain: DomainSpec) -> np.ndarray:
        q = np.asarray(self.q, dtype=float)
        if q.size == 1:
            q = np.full(domain.n_modes, float(q[0]))
        if q.shape != (domain.n_modes,) or np.any(q < 0):
            raise ValueError("explicit covariance must give one nonnegative eigenvalue per mode")
        return q


@dataclass(frozen=True)
class RegularityReport:
    trace_value: float
    nondegeneracy_constant: float
    beta_admissible_sup: float
    space_time_white: bool
    beta_target_admissible: bool

    def as_dict(self) -> dict:
        return {
            "trace_value": self.trace_value,
            "nondegeneracy_constant": self.nondegeneracy_constant,
            "beta_admissible_sup": self.beta_admissible_sup,
            "space_time_white": self.space_time_white,
            "beta_target_admissible": self.beta_target_admissible,
        }


def check_regularity(cov, domain: DomainSpec) -> RegularityReport:
    """Regularity diagnostics for the noise.

    ``beta_admissible_sup`` is the supremum of ``beta`` for which
    ``sum_j lam_j^(beta - 1 - s)`` converges: eigenvalues grow like
    ``j^(2/d)`` so the series converges iff ``beta < 1 + s - d/2``.
    The other two numbers are the truncated Hilbert-Schmidt trace at
    ``beta_target`` and the truncated non-degeneracy constant
    ``sup_j (q_j (lam_j + lam))^(-1/2)`` (infinite if any ``q_j = 0``).
    """
    q = cov.eigenvalues(domain)
    mu = domain.shifted
    s = cov.decay_exponent
    trace = float(np.sum(q * mu ** (cov.beta_target - 1.0)))
    with np.errstate(divide="ignore"):
        nondeg = float(np.max(1.0 / np.sqrt(q * mu))) if np.all(q > 0) else math.inf
    beta_sup = 1.0 + s - domain.dim / 2.0 if np.isfinite(s) else float("nan")
    return RegularityReport(
        trace_value=trace,
        nondegeneracy_constant=nondeg,
        beta_admissible_sup=beta_sup,
        space_time_white=bool(s == 0.0),
        beta_target_admissible=bool(cov.beta_target < beta_sup),
    )


def convolution_variance(q: np.ndarray, shifted: np.ndarray, tau: float) -> np.ndarray:
    """Per-mode variance ``q (1 - exp(-2 mu tau)) / (2 mu)`` of the stochastic convolution."""
    return q * (-np.expm1(-2.0 * shifted * tau)) / (2.0 * shifted)


def _std_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def sample_convolution_increment(domain: DomainSpec, cov, tau: float, rng: np.random.Generator,
                                 size: tuple[int, ...] = ()) -> SpectralField:
    """Exact draw of ``int_0^tau S_lam(tau - s) dW(s)``; ``size`` adds batch axes."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    sd = np.sqrt(convolution_variance(cov.eigenvalues(domain), domain.shifted, tau))
    return SpectralField(sd * _std_normal(rng, tuple(size) + (domain.n_modes,)), domain)


def sample_plain_increment(domain: DomainSpec, cov, tau: float, rng: np.random.Generator,
                           size: tuple[int, ...] = ()) -> SpectralField:
    """Brownian increment ``W(t + tau) - W(t)``: per-mode ``N(0, q_j tau)``."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    sd = np.sqrt(cov.eigenvalues(domain) * tau)
    return SpectralField(sd * _std_normal(rng, tuple(size) + (domain.n_modes,)), domain)


def aggregate_convolution(fine: np.ndarray, shifted: np.ndarray, fine_tau: float) -> np.ndarray:
    """Combine consecutive fine convolution increments into coarse ones.

    ``fine`` has shape ``(r, ..., n_modes)`` (step axis first).  Returns
    ``sum_k S(coarse_end - fine_end_k) fine_k`` with ``coarse = r * fine_tau``.
    """
    r = fine.shape[0]
    decay = np.exp(-shifted * fine_tau)
    agg = fine[0].copy()
    for k in range(1, r):
        agg *= decay
        agg += fine[k]
    return agg


def refine_convolution_increments(coarse_tau: float, r: int, domain: DomainSpec, cov,
                                  rng: np.random.Generator, size: tuple[int, ...] = ()):
    """Draw ``r`` fine convolution increments and their exact coarse aggregate.

    Coarse and fine trajectories built from these see one Brownian path.
    """
    if int(r) != r or r < 1:
        raise ValueError(f"refinement ratio must be a positive integer, got {r}")
    fine_tau = coarse_tau / r
    fine = [sample_convolution_increment(domain, cov, fine_tau, rng, size) for _ in range(int(r))]
    agg = aggregate_convolution(np.stack([f.coeffs for f in fine]), domain.shifted, fine_tau)
    return fine, SpectralField(agg, domain)
