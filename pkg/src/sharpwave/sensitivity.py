"""Derivatives of ``X(t, y) = E_y[phi(u_N)]`` with respect to the initial datum.

The variations are the exact derivatives of the simulated chain
``u_{n+1} = G(u_n) + xi_n``:

* first:  ``eta_{n+1} = DG(u_n) eta_n``
* second: ``zeta_{n+1} = DG(u_n) zeta_n + D^2 G(u_n)(eta1_n, eta2_n)``

For the tamed scheme ``DG(u) v = S(v + tau Theta'(u) v)``, with the
product taken pointwise on the grid.  Because they differentiate the chain
itself, pathwise estimates and central finite differences at common random
numbers agree up to ``O(theta^2)``.

The likelihood-ratio (Bismut-Elworthy-Li) estimators use the discrete
identity

    DX . h = (1/N) E[ phi(u_N) sum_n <Sigma^{-1} eta_{n+1}, xi_n> ]

with ``Sigma`` the per-mode variance of the step increment ``xi_n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import montecarlo as mc
from .integrators import Observer, RunConfig, Stepper, Trajectory, simulate
from .observables import BoundedCosine, GaussianBump, LinearFunctional, Observable
from .spectral_core import SpectralField

__all__ = [
    "Observable",
    "BoundedCosine",
    "GaussianBump",
    "LinearFunctional",
    "VariationState",
    "evolve_first_variation",
    "evolve_second_variation",
    "estimate_dX",
    "estimate_dX_bel",
    "estimate_d2X",
    "estimate_d2X_bel",
    "finite_difference_dX",
    "finite_difference_d2X",
    "SensitivityResult",
    "MIN_NOISE_EIGENVALUE",
]

MIN_NOISE_EIGENVALUE = 1e-30


def _coeffs(v, n: int) -> np.ndarray:
    a = np.asarray(v.coeffs if isinstance(v, SpectralField) else v, dtype=float)
    if a.shape[-1] != n:
        raise ValueError("direction does not match the number of modes")
    return a


@dataclass
class VariationState:
    """First variation along a stored trajectory, optionally with a second variation."""

    eta: np.ndarray
    trajectory: Trajectory = field(repr=False)
    zeta: np.ndarray | None = None

    def final(self) -> SpectralField:
        return SpectralField(self.eta[-1], self.trajectory.domain)


def _check_full_path(traj: Trajectory) -> None:
    if traj.tau is None or traj.config is None:
        raise ValueError("trajectory must come from run(..., retain_all=True)")
    n = int(round((traj.times[-1] - traj.times[0]) / traj.tau))
    if len(traj) != n + 1:
        raise ValueError("trajectory does not retain every step")


def evolve_first_variation(traj: Trajectory, h, config: RunConfig | None = None) -> VariationState:
    """``eta`` at every step of ``traj`` (shape ``(N + 1, n_modes)``), started from ``h``."""
    _check_full_path(traj)
    config = config or traj.config
    stepper = Stepper(config, traj.tau)
    eta = np.empty_like(traj.states)
    eta[0] = _coeffs(h, traj.domain.n_modes)
    for k in range(len(traj) - 1):
        eta[k + 1] = stepper.linearize(traj.states[k][None]).first(eta[k][None])[0]
    return VariationState(eta, traj)


def evolve_second_variation(traj: Trajectory, eta1: VariationState, eta2: VariationState,
                            config: RunConfig | None = None) -> VariationState:
    """``zeta`` for the pair of first variations; returned alongside ``eta1``."""
    _check_full_path(traj)
    if eta1.trajectory is not traj or eta2.trajectory is not traj:
        raise ValueError("both first variations must live on this trajectory")
    config = config or traj.config
    stepper = Stepper(config, traj.tau)
    zeta = np.zeros_like(traj.states)
    for k in range(len(traj) - 1):
        lin = stepper.linearize(traj.states[k][None])
        zeta[k + 1] = lin.second(zeta[k][None], eta1.eta[k][None], eta2.eta[k][None])[0]
    return VariationState(eta1.eta, traj, zeta)


class TangentObserver(Observer):
    """Carries first/second variations and BEL weights alongside a block of paths.

    ``directions``: list of seed directions.  ``pairs``: index pairs for
    second variations.  Weights are split at step ``split`` (used by the
    second-order likelihood-ratio estimator).
    """

    def __init__(self, stepper: Stepper, directions, pairs=(), bel: bool = False, split: int | None = None):
        self.stepper = stepper
        self.directions = directions
        self.pairs = list(pairs)
        self.bel = bel
        self.split = split
        if bel:
            var = stepper.noise_sd**2
            if np.any(var < MIN_NOISE_EIGENVALUE):
                raise ValueError("likelihood-ratio estimators need non-degenerate noise")
            self.inv_var = 1.0 / var

    def start(self, u0, n_steps, tau):
        B = len(u0)
        self.u_prev = np.array(u0)
        self.eta = [np.broadcast_to(h, u0.shape).copy() for h in self.directions]
        self.zeta = [np.zeros_like(u0) for _ in self.pairs]
        self.split = n_steps if self.split is None else self.split
        nd = len(self.directions)
        self.w_first = np.zeros((nd, B))
        self.w_second = np.zeros((nd, B))
        self.wz = np.zeros((len(self.pairs), B))

    def update(self, n, u, inc):
        lin = self.stepper.linearize(self.u_prev)
        new_zeta = [lin.second(z, self.eta[i], self.eta[j]) for z, (i, j) in zip(self.zeta, self.pairs)]
        self.eta = [lin.first(e) for e in self.eta]
        self.zeta = new_zeta
        self.u_prev = u
        if self.bel:
            scaled = inc * self.inv_var
            target = self.w_first if n <= self.split else self.w_second
            for k, e in enumerate(self.eta):
                target[k] += np.sum(e * scaled, axis=-1)
            if n <= self.split:
                for k, z in enumerate(self.zeta):
                    self.wz[k] += np.sum(z * scaled, axis=-1)

    def result(self):
        out = {"final": np.array(self.u_prev)}
        out["eta"] = np.stack(self.eta, axis=1)
        if self.pairs:
            out["zeta"] = np.stack(self.zeta, axis=1)
        if self.bel:
            out["w_first"] = self.w_first.T.copy()
            out["w_second"] = self.w_second.T.copy()
            out["wz"] = self.wz.T.copy()
        return out


def _run_tangents(config: RunConfig, y, directions, n_paths: int, *, pairs=(), bel=False,
                  split=None, stream: int = 0, threads=None, block_size=None) -> dict:
    n = config.domain.n_modes
    y = config.initial_coeffs if y is None else _coeffs(y, n)
    dirs = [_coeffs(h, n) for h in directions]
    stepper = Stepper(config)
    return simulate(config, n_paths, lambda: TangentObserver(stepper, dirs, pairs, bel, split),
                    stream=stream, threads=threads, block_size=block_size, initial=y, stepper=stepper)


@dataclass(frozen=True)
class SensitivityResult:
    """A derivative estimate with its estimator name and horizon."""

    estimate: mc.Estimate
    method: str
    t: float

    @property
    def value(self) -> float:
        return self.estimate.value

    @property
    def ci(self):
        return self.estimate.ci

    def as_dict(self) -> dict:
        return {"method": self.method, "t": self.t, **self.estimate.as_dict()}


def _check_paths(n_paths: int) -> None:
    if n_paths < 100:
        raise ValueError("derivative estimators need at least 100 paths")


def estimate_dX(config: RunConfig, y, h, phi: Observable, n_paths: int, *, stream: int = 0,
                threads=None, block_size=None) -> SensitivityResult:
    """Pathwise estimate of ``E_y[D phi(u_N) . eta^h_N]``."""
    _check_paths(n_paths)
    res = _run_tangents(config, y, [h], n_paths, stream=stream, threads=threads, block_size=block_size)
    samples = phi.directional(res["final"], res["eta"][:, 0])
    return SensitivityResult(mc.mean_estimate(samples), "pathwise", config.T)


def estimate_dX_bel(config: RunConfig, y, h, phi: Observable, n_paths: int, *, stream: int = 0,
                    threads=None, block_size=None) -> SensitivityResult:
    """Likelihood-ratio estimate; needs no derivative of ``phi``."""
    _check_paths(n_paths)
    if config.n_steps < 1:
        raise ValueError("need at least one step")
    res = _run_tangents(config, y, [h], n_paths, bel=True, stream=stream, threads=threads,
                        block_size=block_size)
    weight = res["w_first"][:, 0] / config.n_steps
    return SensitivityResult(mc.mean_estimate(phi.value(res["final"]) * weight), "likelihood_ratio", config.T)


def estimate_d2X(config: RunConfig, y, h1, h2, phi: Observable, n_paths: int, *, stream: int = 0,
                 threads=None, block_size=None) -> SensitivityResult:
    """Pathwise ``E[D^2 phi(u_N)(eta1, eta2) + D phi(u_N) . zeta]``."""
    _check_paths(n_paths)
    res = _run_tangents(config, y, [h1, h2], n_paths, pairs=[(0, 1)], stream=stream,
                        threads=threads, block_size=block_size)
    u, eta, zeta = res["final"], res["eta"], res["zeta"][:, 0]
    samples = phi.hess(u, eta[:, 0], eta[:, 1]) + phi.directional(u, zeta)
    return SensitivityResult(mc.mean_estimate(samples), "pathwise", config.T)


def estimate_d2X_bel(config: RunConfig, y, h1, h2, phi: Observable, n_paths: int, *, stream: int = 0,
                     threads=None, block_size=None) -> SensitivityResult:
    """Likelihood-ratio second derivative, split at the midpoint step ``K = N/2``.

    ``E[phi(u_N) (W_zeta + W^{h2}_{[0,K)} W^{h1}_{[K,N)})]`` where each ``W``
    is a normalised weight sum over its half.
    """
    _check_paths(n_paths)
    N = config.n_steps
    if N < 2 or N % 2:
        raise ValueError("the second-order likelihood-ratio estimator needs an even step count")
    K = N // 2
    res = _run_tangents(config, y, [h1, h2], n_paths, pairs=[(0, 1)], bel=True, split=K,
                        stream=stream, threads=threads, block_size=block_size)
    w_zeta = res["wz"][:, 0] / K
    w_cross = (res["w_first"][:, 1] / K) * (res["w_second"][:, 0] / (N - K))
    samples = phi.value(res["final"]) * (w_zeta + w_cross)
    return SensitivityResult(mc.mean_estimate(samples), "likelihood_ratio", config.T)


def _endpoint(config: RunConfig, y, n_paths, stream, threads, block_size) -> np.ndarray:
    return simulate(config, n_paths, stream=stream, initial=y, threads=threads,
                    block_size=block_size)["final"]


def finite_difference_dX(config: RunConfig, y, h, phi: Observable, n_paths: int, *, theta: float = 1e-4,
                         stream: int = 0, threads=None, block_size=None) -> SensitivityResult:
    """Central difference ``(X(y + theta h) - X(y - theta h)) / (2 theta)`` at common random numbers."""
    n = config.domain.n_modes
    y = config.initial_coeffs if y is None else _coeffs(y, n)
    h = _coeffs(h, n)
    kw = dict(stream=stream, threads=threads, block_size=block_size)
    up = phi.value(_endpoint(config, y + theta * h, n_paths, **kw))
    dn = phi.value(_endpoint(config, y - theta * h, n_paths, **kw))
    return SensitivityResult(mc.mean_estimate((up - dn) / (2 * theta)), "finite_difference", config.T)


def finite_difference_d2X(config: RunConfig, y, h1, h2, phi: Observable, n_paths: int, *,
                          theta: float = 1e-3, stream: int = 0, threads=None,
                          block_size=None) -> SensitivityResult:
    """Mixed central second difference at common random numbers."""
    n = config.domain.n_modes
    y = config.initial_coeffs if y is None else _coeffs(y, n)
    a, b = theta * _coeffs(h1, n), theta * _coeffs(h2, n)
    kw = dict(stream=stream, threads=threads, block_size=block_size)
    vals = [phi.value(_endpoint(config, y + sa * a + sb * b, n_paths, **kw))
            for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
    samples = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * theta * theta)
    return SensitivityResult(mc.mean_estimate(samples), "finite_difference", config.T)
