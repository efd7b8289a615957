"""Time stepping for ``du = (A - lam) u dt + Psi0(u) dt + dW``.

Schemes (``u`` in spectral coordinates, ``S = S_lam(tau)``):

* ``splitting_convolution``: ``u+ = S Phi_tau(u) + int S(t+ - s) dW(s)``
* ``splitting_plain``:       ``u+ = S (Phi_tau(u) + W(t+) - W(t))``
* ``tamed_exp_euler``:       ``u+ = S (u + tau Theta_delta(u)) + int S(t+ - s) dW(s)``

``Phi_tau`` and ``Theta_delta`` act pointwise on the oversampled grid.
Paths are simulated in vectorised blocks; see :mod:`sharpwave.montecarlo`
for the seeding contract.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import montecarlo as mc
from . import spectral_core
from .noise_model import convolution_variance
from .scalar_dynamics import (
    CubicFlow,
    FlowMethod,
    FlowParams,
    OddPolynomial,
    RegularizedDrift,
    flow,
    theta_all,
    theta_delta,
)
from .spectral_core import DomainSpec, SpectralField

__all__ = [
    "Scheme",
    "RunConfig",
    "Trajectory",
    "Stepper",
    "Linearization",
    "step_splitting",
    "step_splitting_plain",
    "step_tamed_exp_euler",
    "run",
    "run_coupled_pair",
    "interpolate",
    "simulate",
    "simulate_coupled",
    "Observer",
    "FinalState",
    "Snapshots",
    "SupMoments",
    "windowed_sup_moments",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_trajectory_binary",
    "read_trajectory_binary",
    "BINARY_MAGIC",
]

BINARY_MAGIC = b"SHRPWAV1"


class Scheme(str, Enum):
    SPLITTING_CONVOLUTION = "splitting_convolution"
    SPLITTING_PLAIN = "splitting_plain"
    TAMED_EXP_EULER = "tamed_exp_euler"

    @property
    def convolution_noise(self) -> bool:
        return self is not Scheme.SPLITTING_PLAIN


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a simulation.

    ``delta`` defaults to ``tau``.  The step-size hypothesis
    ``tau (lam + 1/eps) <= c3`` and ``c1 <= eps lam <= c2`` are enforced;
    pass ``c3=math.inf`` to run a flagged cell anyway.
    """

    domain: DomainSpec
    cov: object
    poly: OddPolynomial
    epsilon: float
    tau: float
    T: float
    scheme: Scheme = Scheme.SPLITTING_CONVOLUTION
    initial: SpectralField | None = None
    master_seed: int = 0
    delta: float | None = None
    c3: float = 1.0
    eps_lam_bounds: tuple = (0.25, 4.0)
    flow_method: FlowMethod | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.epsilon <= 0 or self.tau <= 0 or self.T < 0:
            raise ValueError("epsilon, tau must be positive and T nonnegative")
        n = self.T / self.tau
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"T / tau = {n} is not an integer")
        lo, hi = self.eps_lam_bounds
        if not lo <= self.epsilon * self.lam <= hi:
            raise ValueError(f"eps*lambda = {self.epsilon * self.lam} outside [{lo}, {hi}]")
        if self.step_ratio > self.c3:
            raise ValueError(f"tau (lam + 1/eps) = {self.step_ratio} exceeds c3 = {self.c3}")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.initial is not None and self.initial.domain != self.domain:
            raise ValueError("initial field lives on a different domain")

    @property
    def lam(self) -> float:
        return self.domain.lam

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.tau))

    @property
    def step_ratio(self) -> float:
        return self.tau * (self.lam + 1.0 / self.epsilon)

    @property
    def delta_value(self) -> float:
        return self.tau if self.delta is None else self.delta

    @property
    def flow_params(self) -> FlowParams:
        return FlowParams(self.epsilon, self.lam, self.poly, method=self.flow_method)

    @property
    def initial_coeffs(self) -> np.ndarray:
        if self.initial is None:
            return np.zeros(self.domain.n_modes)
        return np.array(self.initial.coeffs)

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def describe(self) -> dict:
        d = self.domain
        return {
            "domain.dim": d.dim,
            "domain.bc": d.bc.value,
            "domain.modes": d.modes_per_dim,
            "domain.lambda": d.lam,
            "domain.grid_factor": d.phys_grid_factor,
            "noise": _describe_cov(self.cov),
            "poly.odd_coeffs": list(self.poly.odd_coeffs),
            "epsilon": self.epsilon,
            "tau": self.tau,
            "T": self.T,
            "scheme": self.scheme.value,
            "delta": self.delta_value,
            "initial": self.initial_coeffs.tolist(),
            "master_seed": self.master_seed,
        }


def _describe_cov(cov) -> dict:
    if hasattr(cov, "q"):
        return {"q": [float(x) for x in cov.q]}
    return {"decay_exponent": cov.decay_exponent, "cap": cov.cap, "beta_target": cov.beta_target}


@dataclass
class Trajectory:
    """Snapshots of one path (``states`` shape ``(n_snap, n_modes)``) or of a
    block of paths (``(n_snap, n_paths, n_modes)``)."""

    times: np.ndarray
    states: np.ndarray
    domain: DomainSpec
    tau: float | None = None
    increments: np.ndarray | None = None
    config: RunConfig | None = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        if self.states.shape[-1] != self.domain.n_modes:
            raise ValueError("states do not match the domain")

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> SpectralField:
        return SpectralField(self.states[i], self.domain)

    @property
    def final(self) -> SpectralField:
        return self.state(-1)


class Stepper:
    """One-step map of a scheme at a given step size, vectorised over paths."""

    def __init__(self, config: RunConfig, tau: float | None = None):
        self.config = config
        self.tau = config.tau if tau is None else tau
        self.scheme = config.scheme
        dom = config.domain
        self.domain = dom
        mu = dom.shifted
        self.decay = spectral_core.semigroup_factors(dom, self.tau)
        q = config.cov.eigenvalues(dom)
        self.q = q
        if self.scheme.convolution_noise:
            self.noise_sd = np.sqrt(convolution_variance(q, mu, self.tau))
        else:
            self.noise_sd = np.sqrt(q * self.tau)
        params = config.flow_params
        self.params = params
        self.linear = config.poly.is_linear
        if self.scheme is Scheme.TAMED_EXP_EULER:
            # default delta tracks this stepper's own step size
            delta = self.tau if config.delta is None else config.delta
            self.drift = RegularizedDrift(delta, params)
            self._cubic = params.poly.m == 1
            if self.linear:
                self.lin_factor = 1.0 + self.tau * params.rate / (1.0 + delta)
        else:
            self.drift = None
            if self.linear:
                self.lin_factor = math.exp(params.rate * self.tau)
            elif params.method is FlowMethod.CLOSED_FORM_CUBIC:
                self._flow = CubicFlow(params, self.tau)
            else:
                self._flow = lambda x: flow(x, self.tau, params)

    # -- pieces --------------------------------------------------------
    def flow_part(self, u: np.ndarray) -> np.ndarray:
        """Spectral coefficients of ``Phi_tau(u)`` (pointwise on the grid)."""
        if self.linear:
            return u * self.lin_factor
        dom = self.domain
        return dom.analyze(self._flow(dom.synthesize(u)))

    def drift_part(self, u: np.ndarray) -> np.ndarray:
        """``u + tau Theta(u)`` for the tamed scheme."""
        if self.linear:
            return u * self.lin_factor
        dom = self.domain
        x = dom.synthesize(u)
        if self._cubic:
            # Theta = x (c - b x^2) / (1 + delta x^2)
            p = self.params
            x2 = x * x
            th = x * (p.rate - p.cubic_coeff * x2) / (1.0 + self.drift.delta * x2)
        else:
            th = theta_delta(x, self.drift)
        return u + self.tau * dom.analyze(th)

    def deterministic(self, u: np.ndarray) -> np.ndarray:
        if self.scheme is Scheme.TAMED_EXP_EULER:
            return self.drift_part(u)
        return self.flow_part(u)

    def scale_noise(self, z: np.ndarray) -> np.ndarray:
        return z * self.noise_sd

    def step(self, u: np.ndarray, increment: np.ndarray) -> np.ndarray:
        """Advance with an already scaled noise increment (the scheme's native one)."""
        v = self.deterministic(u)
        if self.scheme.convolution_noise:
            v *= self.decay
            v += increment
        else:
            v += increment
            v *= self.decay
        return v

    def linearize(self, u: np.ndarray) -> "Linearization":
        return Linearization(self, u)

    def aggregate(self, fine: list[np.ndarray], fine_tau: float) -> np.ndarray:
        """Coarse native increment from fine native increments of the same path."""
        if not self.scheme.convolution_noise:
            out = fine[0].copy()
            for f in fine[1:]:
                out += f
            return out
        d = spectral_core.semigroup_factors(self.domain, fine_tau)
        out = fine[0].copy()
        for f in fine[1:]:
            out *= d
            out += f
        return out


class Linearization:
    """First and second derivatives of the one-step map ``G`` at a batch of states.

    The noise enters additively, so these are also the derivatives of the
    chain ``u_{n+1} = G(u_n) + xi_n`` with respect to ``u_n``.  The
    projected pointwise multiplication is symmetric, which gives the
    adjoint for free.
    """

    def __init__(self, stepper: Stepper, u: np.ndarray):
        self.stepper = stepper
        self.decay = stepper.decay
        dom = stepper.domain
        self.m1 = self.m2 = None
        if stepper.linear:
            self.factor = stepper.lin_factor
            return
        x = dom.synthesize(u)
        if stepper.scheme is Scheme.TAMED_EXP_EULER:
            _, t1, t2 = theta_all(x, stepper.drift)
            self.identity = True
            self.m1, self.m2 = stepper.tau * t1, stepper.tau * t2
        else:
            if stepper.params.method is not FlowMethod.CLOSED_FORM_CUBIC:
                raise NotImplementedError("linearisation needs the closed-form flow")
            self.identity = False
            self.m1, self.m2 = stepper._flow.derivative(x), stepper._flow.derivative2(x)

    def _mult(self, m: np.ndarray, v: np.ndarray) -> np.ndarray:
        dom = self.stepper.domain
        return dom.analyze(m * dom.synthesize(v))

    def _inner(self, v):
        """``(I + tau Theta')`` or ``Phi'`` applied to ``v`` (before the semigroup)."""
        if self.m1 is None:
            return self.factor * v
        w = self._mult(self.m1, v)
        return v + w if self.identity else w

    def first(self, v: np.ndarray) -> np.ndarray:
        return self.decay * self._inner(v)

    def first_adjoint(self, w: np.ndarray) -> np.ndarray:
        return self._inner(self.decay * w)

    def second(self, z: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """``DG z + D^2 G (a, b)``."""
        out = self._inner(z)
        if self.m2 is not None:
            dom = self.stepper.domain
            out = out + dom.analyze(self.m2 * (dom.synthesize(a) * dom.synthesize(b)))
        return self.decay * out


def _single_step(scheme: Scheme, u_n: SpectralField, config: RunConfig, rng: np.random.Generator):
    cfg = config if config.scheme is scheme else config.with_(scheme=scheme)
    st = Stepper(cfg)
    z = rng.standard_normal(u_n.coeffs.shape)
    return SpectralField(st.step(np.array(u_n.coeffs), st.scale_noise(z)), u_n.domain)


def step_splitting(u_n: SpectralField, config: RunConfig, rng: np.random.Generator) -> SpectralField:
    return _single_step(Scheme.SPLITTING_CONVOLUTION, u_n, config, rng)


def step_splitting_plain(u_n: SpectralField, config: RunConfig, rng: np.random.Generator) -> SpectralField:
    return _single_step(Scheme.SPLITTING_PLAIN, u_n, config, rng)


def step_tamed_exp_euler(u_n: SpectralField, config: RunConfig, rng: np.random.Generator) -> SpectralField:
    return _single_step(Scheme.TAMED_EXP_EULER, u_n, config, rng)


# -- block simulation -------------------------------------------------------

class Observer:
    """Per-block accumulator; ``update`` sees the state after each step.

    ``inc`` is the native noise increment that produced ``u``.  Observers
    must copy ``u`` if they keep it.
    """

    def start(self, u0: np.ndarray, n_steps: int, tau: float) -> None:
        pass

    def update(self, n: int, u: np.ndarray, inc: np.ndarray) -> None:
        pass

    def result(self) -> dict:
        return {}


class FinalState(Observer):
    def start(self, u0, n_steps, tau):
        self.u = np.array(u0)

    def update(self, n, u, inc):
        self.u = u

    def result(self):
        return {"final": np.array(self.u)}


class Snapshots(Observer):
    """States at the given step indices (``None``: every step), optionally with increments."""

    def __init__(self, steps=None, keep_increments: bool = False):
        self.steps = None if steps is None else set(int(s) for s in steps)
        self.keep_increments = keep_increments

    def start(self, u0, n_steps, tau):
        self.states, self.incs = [], []
        if self.steps is None or 0 in self.steps:
            self.states.append(np.array(u0))

    def update(self, n, u, inc):
        if self.steps is None or n in self.steps:
            self.states.append(np.array(u))
        if self.keep_increments:
            self.incs.append(np.array(inc))

    def result(self):
        # path axis first so blocks concatenate
        out = {"states": np.stack(self.states, axis=1)}
        if self.keep_increments and self.incs:
            out["increments"] = np.stack(self.incs, axis=1)
        return out


class SupMoments(Observer):
    """Per-path time average of ``sup_norm(u)^p`` over each window of step indices ``[a, b]``."""

    def __init__(self, domain: DomainSpec, windows, p: float):
        self.domain, self.windows, self.p = domain, list(windows), p

    def start(self, u0, n_steps, tau):
        self.acc = np.zeros((len(u0), len(self.windows)))
        self.update(0, u0, None)

    def update(self, n, u, inc):
        hit = [k for k, (a, b) in enumerate(self.windows) if a <= n <= b]
        if hit:
            m = spectral_core.sup_norm(SpectralField(u, self.domain)) ** self.p
            for k in hit:
                self.acc[:, k] += m

    def result(self):
        counts = np.array([b - a + 1 for a, b in self.windows], dtype=float)
        return {"window_means": self.acc / counts}


def windowed_sup_moments(config: RunConfig, n_paths: int, windows, *, p: float = 4.0, stream: int | None = None,
                         threads=None, block_size=None) -> list:
    """``E[mean over t in window of sup_norm(u_t)^p]`` for each time window ``(t0, t1)``.

    Returns one :class:`~sharpwave.montecarlo.Estimate` per window; the CI is
    over independent paths.
    """
    idx = []
    for t0, t1 in windows:
        a, b = int(round(t0 / config.tau)), int(round(t1 / config.tau))
        if not 0 <= a <= b <= config.n_steps:
            raise ValueError(f"window ({t0}, {t1}) outside [0, T]")
        idx.append((a, b))
    stream = mc.stream_id("moments", config.tau) if stream is None else stream
    res = simulate(config, n_paths, lambda: SupMoments(config.domain, idx, p), stream=stream,
                   threads=threads, block_size=block_size)
    return mc.mean_estimates(res["window_means"])


def _initial_block(config: RunConfig, local: range, initial) -> np.ndarray:
    u0 = config.initial_coeffs if initial is None else np.asarray(initial, dtype=float)
    if u0.ndim == 2:
        return np.array(u0[local.start:local.stop])
    return np.broadcast_to(u0, (len(local), u0.size)).copy()


def simulate(config: RunConfig, n_paths: int, observer_factory=FinalState, *, stream: int = 0,
             first_path: int = 0, threads: int | None = None, block_size: int | None = None,
             initial=None, n_steps: int | None = None, stepper: Stepper | None = None) -> dict:
    """Run paths ``first_path, ..., first_path + n_paths - 1``.

    Returns the observers' results concatenated in path order.  ``initial``
    may be one coefficient vector or one per path.
    """
    n_steps = config.n_steps if n_steps is None else int(n_steps)
    stepper = stepper or Stepper(config)
    width = config.domain.n_modes

    def block(local: range) -> dict:
        u = _initial_block(config, local, initial)
        obs = observer_factory()
        obs.start(u, n_steps, stepper.tau)
        if n_steps:
            paths = range(first_path + local.start, first_path + local.stop)
            noise = mc.NoiseSource(config.master_seed, stream, paths, width, n_steps)
        for n in range(n_steps):
            inc = stepper.scale_noise(noise.next())
            u = stepper.step(u, inc)
            obs.update(n + 1, u, inc)
        return obs.result()

    return mc.concat_results(mc.map_blocks(block, n_paths, threads, block_size))


def simulate_coupled(config: RunConfig, n_paths: int, coarse_tau: float, ratio: int,
                     observer_factory=FinalState, *, stream: int = 0, first_path: int = 0,
                     threads: int | None = None, block_size: int | None = None, initial=None) -> dict:
    """Coarse (``coarse_tau``) and fine (``coarse_tau / ratio``) chains on one Brownian path.

    Fine native increments are drawn per path and coarse increments are
    their exact aggregates, so the fine chain is bitwise the chain
    :func:`simulate` gives at the fine step with the same stream.  Result
    keys are prefixed ``coarse_`` and ``fine_``.
    """
    if int(ratio) != ratio or ratio < 1:
        raise ValueError("ratio must be a positive integer")
    ratio = int(ratio)
    n_coarse = int(round(config.T / coarse_tau))
    if abs(n_coarse * coarse_tau - config.T) > 1e-9 * max(1.0, config.T):
        raise ValueError("T is not a multiple of the coarse step")
    fine_tau = coarse_tau / ratio
    coarse = Stepper(config, coarse_tau)
    fine = Stepper(config, fine_tau)
    width = config.domain.n_modes

    def block(local: range) -> dict:
        uc = _initial_block(config, local, initial)
        uf = uc.copy()
        oc, of = observer_factory(), observer_factory()
        oc.start(uc, n_coarse, coarse_tau)
        of.start(uf, n_coarse * ratio, fine_tau)
        if n_coarse:
            paths = range(first_path + local.start, first_path + local.stop)
            noise = mc.NoiseSource(config.master_seed, stream, paths, width, n_coarse * ratio)
        for n in range(n_coarse):
            incs = []
            for k in range(ratio):
                inc = fine.scale_noise(noise.next())
                incs.append(inc)
                uf = fine.step(uf, inc)
                of.update(n * ratio + k + 1, uf, inc)
            inc_c = incs[0] if ratio == 1 else coarse.aggregate(incs, fine_tau)
            uc = coarse.step(uc, inc_c)
            oc.update(n + 1, uc, inc_c)
        out = {f"coarse_{k}": v for k, v in oc.result().items()}
        out.update({f"fine_{k}": v for k, v in of.result().items()})
        return out

    return mc.concat_results(mc.map_blocks(block, n_paths, threads, block_size))


# -- single trajectories ----------------------------------------------------

def _snapshot_steps(times, tau: float, n_steps: int) -> list[int]:
    steps = {0, n_steps}
    for t in np.atleast_1d(times if times is not None else []):
        k = int(round(t / tau))
        if abs(k * tau - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= k <= n_steps:
            raise ValueError(f"snapshot time {t} is not a step time in [0, T]")
        steps.add(k)
    return sorted(steps)


def run(config: RunConfig, snapshot_times=None, *, retain_all: bool = False,
        keep_increments: bool = False, path: int = 0, stream: int = 0) -> Trajectory:
    """One path from ``t = 0`` to ``T``, driven by path stream ``path``.

    Stores ``u0``, the final state and any ``snapshot_times``; with
    ``retain_all`` every step.  ``keep_increments`` also stores the native
    noise increments that :func:`interpolate` needs.
    """
    n = config.n_steps
    steps = None if retain_all else _snapshot_steps(snapshot_times, config.tau, n)
    res = simulate(config, 1, lambda: Snapshots(steps, keep_increments), stream=stream,
                   first_path=path, threads=1)
    idx = np.arange(n + 1) if steps is None else np.array(steps)
    incs = res.get("increments")
    return Trajectory(idx * config.tau, res["states"][0], config.domain, config.tau,
                      None if incs is None else incs[0], config)


def run_coupled_pair(config_coarse: RunConfig, refinement_ratio: int, *, path: int = 0,
                     stream: int = 0, keep_increments: bool = False) -> tuple[Trajectory, Trajectory]:
    """Coarse and fine trajectories (every step stored) driven by one Brownian path."""
    r = int(refinement_ratio)
    tau = config_coarse.tau
    n = config_coarse.n_steps
    res = simulate_coupled(config_coarse, 1, tau, r, lambda: Snapshots(None, keep_increments),
                           stream=stream, first_path=path, threads=1)
    inc_c = res.get("coarse_increments")
    inc_f = res.get("fine_increments")
    coarse = Trajectory(np.arange(n + 1) * tau, res["coarse_states"][0], config_coarse.domain, tau,
                        None if inc_c is None else inc_c[0], config_coarse)
    fine_cfg = config_coarse.with_(tau=tau / r, c3=math.inf)
    fine = Trajectory(np.arange(n * r + 1) * (tau / r), res["fine_states"][0], config_coarse.domain,
                      tau / r, None if inc_f is None else inc_f[0], fine_cfg)
    return coarse, fine


def interpolate(traj: Trajectory, t: float) -> SpectralField:
    """Continuous interpolant of the scheme inside the step containing ``t``.

    The deterministic part is exact.  The in-step stochastic integral is
    replaced by its conditional mean given the stored step increment
    (per-mode Ornstein-Uhlenbeck bridge), so only the step endpoints are
    reproduced exactly.
    """
    if traj.tau is None or traj.config is None or traj.increments is None:
        raise ValueError("interpolation needs a trajectory with every step and its increments")
    tau = traj.tau
    n_steps = len(traj.increments)
    if not -1e-12 <= t <= n_steps * tau + 1e-12:
        raise ValueError(f"t = {t} outside the trajectory")
    k = min(int(math.floor(t / tau + 1e-12)), n_steps - 1)
    s = min(max(t - k * tau, 0.0), tau)
    pos = np.flatnonzero(np.isclose(traj.times, k * tau, rtol=0, atol=1e-12 * max(1.0, tau)))
    if pos.size == 0:
        raise ValueError("the step start is not among the stored snapshots")
    u_k = traj.states[pos[0]]
    inc = traj.increments[k]
    dom = traj.domain
    if s == 0.0:
        return SpectralField(np.array(u_k), dom)
    cfg = traj.config
    st = Stepper(cfg, s)
    # delta stays the one used for the full step
    if cfg.scheme is Scheme.TAMED_EXP_EULER and cfg.delta is None:
        st = Stepper(cfg.with_(delta=tau), s)
    mu = dom.shifted
    v = st.deterministic(np.array(u_k)[None, :])[0]
    if cfg.scheme.convolution_noise:
        q = cfg.cov.eigenvalues(dom)
        full = convolution_variance(q, mu, tau)
        part = convolution_variance(q, mu, s)
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(full > 0, spectral_core.semigroup_factors(dom, tau - s) * part / full, 0.0)
        out = spectral_core.semigroup_factors(dom, s) * v + w * inc
    else:
        out = spectral_core.semigroup_factors(dom, s) * (v + (s / tau) * inc)
    return SpectralField(out, dom)


# -- export -----------------------------------------------------------------

def _mode_label(domain: DomainSpec, i: int) -> str:
    return "-".join(str(int(j)) for j in domain.mode_index[i])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Long format: one row per (time, mode) with columns ``time, mode, coefficient``."""
    if traj.states.ndim != 2:
        raise ValueError("CSV export handles a single path")
    labels = [_mode_label(traj.domain, i) for i in range(traj.domain.n_modes)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "mode", "coefficient"])
        for t, row in zip(traj.times, traj.states):
            for lab, c in zip(labels, row):
                w.writerow([repr(float(t)), lab, repr(float(c))])


def read_trajectory_csv(path, domain: DomainSpec) -> Trajectory:
    pos = {_mode_label(domain, i): i for i in range(domain.n_modes)}
    times, rows = [], {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            t = float(rec["time"])
            if t not in rows:
                times.append(t)
                rows[t] = np.zeros(domain.n_modes)
            rows[t][pos[rec["mode"]]] = float(rec["coefficient"])
    return Trajectory(np.array(times), np.array([rows[t] for t in times]), domain)


def write_trajectory_binary(traj: Trajectory, path) -> None:
    """Magic, ``uint64`` counts, times, then the (time x mode) matrix column-major; little-endian."""
    if traj.states.ndim != 2:
        raise ValueError("binary export handles a single path")
    n_t, n_m = traj.states.shape
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<QQ", n_t, n_m))
        fh.write(np.asarray(traj.times, dtype="<f8").tobytes())
        fh.write(np.asarray(traj.states, dtype="<f8").tobytes(order="F"))


def read_trajectory_binary(path, domain: DomainSpec) -> Trajectory:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != BINARY_MAGIC:
        raise ValueError("not a trajectory dump (bad magic)")
    n_t, n_m = struct.unpack("<QQ", data[8:24])
    if n_m != domain.n_modes:
        raise ValueError("dump does not match the domain")
    body = np.frombuffer(data, dtype="<f8", offset=24)
    if body.size != n_t * (n_m + 1):
        raise ValueError("truncated dump")
    times = body[:n_t].astype(float)
    states = body[n_t:].reshape((n_t, n_m), order="F").astype(float)
    return Trajectory(times, states, domain)
