"""Long-run statistics of the simulated chains.

Nonlinear comparisons are always relative (step size against step size,
start against start); absolute checks use the linear case, where the
invariant law is Gaussian with per-mode variance ``q_j / (2 B_j)``,
``B_j = lam_j + a1/eps``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import montecarlo as mc
from .integrators import Observer, RunConfig, Stepper, simulate
from .observables import BoundedCosine, GaussianBump, Observable
from .spectral_core import SpectralField

__all__ = [
    "estimate_invariant_mean",
    "GapCurve",
    "ergodic_gap_curve",
    "default_dictionary",
    "MeasureGap",
    "invariant_measure_gap",
    "PoissonEstimate",
    "estimate_poisson",
    "poisson_gradient_variance",
    "CLTReport",
    "clt_experiment",
    "clt_hypothesis_rule",
    "ErgodicReport",
    "HypothesisWarning",
]


class HypothesisWarning(UserWarning):
    """A configuration sits outside the regime the asymptotic results assume."""


def _coeffs(v, n: int) -> np.ndarray:
    a = np.asarray(v.coeffs if isinstance(v, SpectralField) else v, dtype=float)
    if a.shape[-1] != n:
        raise ValueError("state does not match the number of modes")
    return a


def _step_index(t: float, tau: float) -> int:
    k = int(round(t / tau))
    if abs(k * tau - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not a multiple of tau = {tau}")
    return k


# -- observers ----------------------------------------------------------------

class _WindowAverage(Observer):
    """Per-path average of ``phi(u_n)`` over steps ``n0 <= n <= n1``."""

    def __init__(self, phis, n0: int):
        self.phis, self.n0 = phis, n0

    def start(self, u0, n_steps, tau):
        self.acc = np.zeros((len(u0), len(self.phis)))
        self.count = 0
        if self.n0 == 0:
            self.update(0, u0, None)

    def update(self, n, u, inc):
        if n >= self.n0:
            for k, p in enumerate(self.phis):
                self.acc[:, k] += p.value(u)
            self.count += 1

    def result(self):
        return {"avg": self.acc / self.count}


class _Sampled(Observer):
    """``phi(u_n)`` at the requested step indices."""

    def __init__(self, phi, steps):
        self.phi, self.steps = phi, {s: i for i, s in enumerate(steps)}

    def start(self, u0, n_steps, tau):
        self.vals = np.zeros((len(u0), len(self.steps)))
        self.update(0, u0, None)

    def update(self, n, u, inc):
        i = self.steps.get(n)
        if i is not None:
            self.vals[:, i] = self.phi.value(u)

    def result(self):
        return {"vals": self.vals}


# -- invariant means ------------------------------------------------------------

def estimate_invariant_mean(config: RunConfig, phi: Observable, burn_in: float, horizon: float,
                            n_paths: int, *, stream: int | None = None, threads=None,
                            block_size=None) -> mc.Estimate:
    """Ensemble-and-time average of ``phi`` over ``[burn_in, horizon]``.

    Each path contributes its time average, so the CI is over independent
    paths.
    """
    return _invariant_means(config, [phi], burn_in, horizon, n_paths, stream=stream,
                            threads=threads, block_size=block_size)[0]


def _invariant_means(config, phis, burn_in, horizon, n_paths, *, stream=None, threads=None,
                     block_size=None) -> list[mc.Estimate]:
    if not 0 <= burn_in < horizon:
        raise ValueError("need 0 <= burn_in < horizon")
    cfg = config.with_(T=horizon)
    n0 = _step_index(burn_in, cfg.tau)
    if stream is None:
        stream = mc.stream_id("invariant", cfg.tau)
    res = simulate(cfg, n_paths, lambda: _WindowAverage(phis, n0), stream=stream, threads=threads,
                   block_size=block_size)
    return mc.mean_estimates(res["avg"])


# -- ergodic gap ------------------------------------------------------------------

@dataclass
class GapCurve:
    """``E phi(u_t^{x1}) - E phi(u_t^{x2})`` at each time, with an exponential fit.

    The fit regresses ``log |gap|`` on ``t`` over the identifiable times
    (gap above three CI half-widths): ``|gap| ~ omega2 exp(-omega1 t)``.
    """

    times: np.ndarray
    differences: list
    coupling: str
    omega1: float = math.nan
    omega2: float = math.nan
    r_squared: float = math.nan
    fit_times: list = field(default_factory=list)

    @property
    def gaps(self) -> np.ndarray:
        return np.abs([d.value for d in self.differences])

    def as_dict(self) -> dict:
        return {
            "coupling": self.coupling,
            "times": [float(t) for t in self.times],
            "gap": [float(g) for g in self.gaps],
            "difference": [d.as_dict() for d in self.differences],
            "fit": {"omega1": self.omega1, "omega2": self.omega2, "r_squared": self.r_squared,
                    "times_used": [float(t) for t in self.fit_times]},
        }


def _exp_fit(times, gaps, half_widths):
    keep = [i for i in range(len(times)) if gaps[i] > 3 * half_widths[i] and gaps[i] > 0]
    if len(keep) < 3:
        return math.nan, math.nan, math.nan, [times[i] for i in keep]
    t = np.asarray(times)[keep]
    y = np.log(np.asarray(gaps)[keep])
    fit = stats.linregress(t, y)
    return -fit.slope, math.exp(fit.intercept), fit.rvalue**2, list(t)


def ergodic_gap_curve(config: RunConfig, x1, x2, phi: Observable, times, n_paths: int, *,
                      coupling: str = "independent", threads=None, block_size=None) -> GapCurve:
    """Gap between two starts at each of ``times``.

    ``coupling="independent"`` drives the two starts with independent noise,
    so the gap reflects the decay of the laws and hits a Monte Carlo noise
    floor.  ``coupling="common"`` reuses one Brownian path per pair; the
    difference then contracts pathwise.
    """
    n = config.domain.n_modes
    x1, x2 = _coeffs(x1, n), _coeffs(x2, n)
    if coupling not in ("independent", "common"):
        raise ValueError("coupling must be 'independent' or 'common'")
    times = np.sort(np.atleast_1d(np.asarray(times, dtype=float)))
    steps = [_step_index(t, config.tau) for t in times]
    cfg = config.with_(T=times[-1])
    s1 = mc.stream_id("gap", 1)
    s2 = s1 if coupling == "common" else mc.stream_id("gap", 2)
    kw = dict(threads=threads, block_size=block_size)
    v1 = simulate(cfg, n_paths, lambda: _Sampled(phi, steps), stream=s1, initial=x1, **kw)["vals"]
    v2 = simulate(cfg, n_paths, lambda: _Sampled(phi, steps), stream=s2, initial=x2, **kw)["vals"]
    if coupling == "common":
        diffs = mc.mean_estimates(v1 - v2)
    else:
        diffs = [a - b for a, b in zip(mc.mean_estimates(v1), mc.mean_estimates(v2))]
    curve = GapCurve(times, diffs, coupling)
    w1, w2, r2, used = _exp_fit(list(times), [abs(d.value) for d in diffs], [d.half_width for d in diffs])
    curve.omega1, curve.omega2, curve.r_squared, curve.fit_times = w1, w2, r2, used
    return curve


# -- invariant measure across step sizes ------------------------------------------

def default_dictionary(domain) -> list[Observable]:
    """Eight bounded test functionals; the sup of their mean gaps lower-bounds a TV distance."""
    n = domain.n_modes

    def e(k):
        v = np.zeros(n)
        v[k] = 1.0
        return v

    return [
        BoundedCosine(e(0), 1.0),
        BoundedCosine(e(0), 2.0),
        BoundedCosine(e(1), 1.0),
        BoundedCosine(e(2), 2.0),
        BoundedCosine(e(0) + e(1), 1.0),
        BoundedCosine(e(0), 1.0, -math.pi / 2),
        GaussianBump(1, 0.5),
        GaussianBump(4, 1.0),
    ]


@dataclass
class MeasureGap:
    tau1: float
    tau2: float
    means1: list
    means2: list
    names: list

    @property
    def gaps(self) -> list:
        return [a - b for a, b in zip(self.means1, self.means2)]

    @property
    def tv_proxy(self) -> float:
        # dictionary functions are bounded by 1, so this is a lower bound of 2 * TV
        return max(abs(g.value) for g in self.gaps)

    def as_dict(self) -> dict:
        return {
            "tau1": self.tau1,
            "tau2": self.tau2,
            "tv_proxy": self.tv_proxy,
            "per_observable": [
                {"observable": n, "mean_tau1": a.as_dict(), "mean_tau2": b.as_dict(), "gap": g.as_dict()}
                for n, a, b, g in zip(self.names, self.means1, self.means2, self.gaps)
            ],
        }


def invariant_measure_gap(config1: RunConfig, config2: RunConfig, phis=None, *, burn_in: float = 5.0,
                          horizon: float = 25.0, n_paths: int = 2000, threads=None,
                          block_size=None) -> MeasureGap:
    """Long-run averages at two step sizes and their differences per observable.

    Streams are keyed by step size: equal step sizes reproduce the same
    numbers (gap exactly 0), different ones are independent.
    """
    if config1.tau < config2.tau:
        raise ValueError("expected tau1 >= tau2")
    phis = phis or default_dictionary(config1.domain)
    kw = dict(threads=threads, block_size=block_size)
    m1 = _invariant_means(config1, phis, burn_in, horizon, n_paths, **kw)
    m2 = _invariant_means(config2, phis, burn_in, horizon, n_paths, **kw)
    names = [p.name + ":" + ",".join(f"{k}={v}" for k, v in p.describe().items()
                                       if k in ("frequency", "phase", "rank", "width")) for p in phis]
    return MeasureGap(config1.tau, config2.tau, m1, m2, names)


# -- Poisson equation -------------------------------------------------------------------

class _PoissonObserver(Observer):
    """Trapezoid integrals of ``phi`` up to each horizon and, optionally, the adjoint gradient."""

    def __init__(self, phi, horizon_steps, stepper: Stepper | None):
        self.phi = phi
        self.hsteps = sorted(horizon_steps)
        self.stepper = stepper

    def start(self, u0, n_steps, tau):
        self.tau = tau
        self.vals = [self.phi.value(u0)]
        self.states = [np.array(u0)] if self.stepper is not None else None

    def update(self, n, u, inc):
        self.vals.append(self.phi.value(u))
        if self.states is not None:
            self.states.append(np.array(u))

    def result(self):
        v = np.stack(self.vals, axis=1)
        out = {}
        parts = []
        for k in self.hsteps:
            parts.append(self.tau * (v[:, : k + 1].sum(axis=1) - 0.5 * (v[:, 0] + v[:, k])))
        out["integrals"] = np.stack(parts, axis=1)
        if self.states is not None:
            out["gradient"] = self._adjoint()
        return out

    def _adjoint(self) -> np.ndarray:
        N = self.hsteps[-1]
        tau = self.tau
        lam = 0.5 * tau * self.phi.grad(self.states[N])
        for n in range(N - 1, -1, -1):
            c = 0.5 if n == 0 else 1.0
            lin = self.stepper.linearize(self.states[n])
            lam = c * tau * self.phi.grad(self.states[n]) + lin.first_adjoint(lam)
        return lam


@dataclass
class PoissonEstimate:
    """Truncated Poisson-equation solution at a point.

    ``value`` is the estimate at the largest horizon; ``partial`` holds one
    estimate per horizon; ``gradient`` holds per-mode means and standard
    errors (``None`` unless requested).
    """

    value: mc.Estimate
    horizons: list
    partial: list
    tail: mc.Estimate
    converged: bool
    gradient_mean: np.ndarray | None = None
    gradient_stderr: np.ndarray | None = None
    n_paths: int = 0

    @property
    def horizon(self) -> float:
        return self.horizons[-1]

    def directional(self, h) -> mc.Estimate:
        """``D Xi . h`` (CI from per-mode errors, conservative by the triangle inequality)."""
        h = np.asarray(h.coeffs if isinstance(h, SpectralField) else h, dtype=float)
        if self.gradient_mean is None:
            raise ValueError("gradient was not computed")
        return mc.Estimate(float(self.gradient_mean @ h), float(np.abs(h) @ self.gradient_stderr), self.n_paths)

    def as_dict(self) -> dict:
        out = {
            "value": self.value.as_dict(),
            "horizons": list(self.horizons),
            "partial": [p.as_dict() for p in self.partial],
            "tail": self.tail.as_dict(),
            "converged": self.converged,
        }
        if self.gradient_mean is not None:
            out["gradient"] = {"mean": self.gradient_mean.tolist(), "stderr": self.gradient_stderr.tolist(),
                               "n_paths": self.n_paths}
        return out


def _poisson_run(config, phi, x, horizon_steps, n_paths, gradient, stream, first_path=0,
                 threads=None, block_size=None):
    N = max(horizon_steps)
    cfg = config.with_(T=N * config.tau)
    stepper = Stepper(cfg) if gradient else None
    return simulate(cfg, n_paths, lambda: _PoissonObserver(phi, horizon_steps, stepper), stream=stream,
                    first_path=first_path, initial=x, threads=threads, block_size=block_size)


def estimate_poisson(config: RunConfig, phi: Observable, x, horizons, n_paths: int, *,
                     mu: mc.Estimate | None = None, gradient: bool = True, stream: int | None = None,
                     threads=None, block_size: int | None = 250) -> PoissonEstimate:
    """``int_0^T2 (E phi(u_t^x) - mu) dt`` for each horizon ``T2`` (trapezoid at step resolution).

    ``mu`` is the invariant mean; pass ``Estimate(m, 0, n)`` when it is known
    exactly.  With ``gradient=True`` the gradient at ``x`` comes from the
    adjoint of the chain over the largest horizon.  ``converged`` checks the
    last two horizons agree within twice the CI half-width of their
    difference; a ``HypothesisWarning`` is issued otherwise.
    """
    if mu is None:
        raise ValueError("estimate the invariant mean first and pass it as mu")
    horizons = sorted(float(h) for h in np.atleast_1d(horizons))
    if len(horizons) < 2:
        raise ValueError("need at least two horizons to judge convergence")
    steps = [_step_index(h, config.tau) for h in horizons]
    x = _coeffs(x, config.domain.n_modes) if x is not None else config.initial_coeffs
    stream = mc.stream_id("poisson") if stream is None else stream
    res = _poisson_run(config, phi, x, steps, n_paths, gradient, stream, threads=threads,
                       block_size=block_size)
    ints = res["integrals"]
    partial = []
    for k, T2 in enumerate(horizons):
        e = mc.mean_estimate(ints[:, k])
        partial.append(mc.Estimate(e.value - T2 * mu.value, float(math.hypot(e.stderr, T2 * mu.stderr)),
                                   n_paths))
    d = mc.mean_estimate(ints[:, -1] - ints[:, -2])
    dT = horizons[-1] - horizons[-2]
    tail = mc.Estimate(d.value - dT * mu.value, float(math.hypot(d.stderr, dT * mu.stderr)), n_paths)
    converged = abs(tail.value) <= 2 * tail.half_width
    if not converged:
        warnings.warn(f"Poisson integral still moving at T2 = {horizons[-1]}: horizon shorter than mixing",
                      HypothesisWarning, stacklevel=2)
    out = PoissonEstimate(partial[-1], horizons, partial, tail, bool(converged), n_paths=n_paths)
    if gradient:
        g = res["gradient"]
        out.gradient_mean = g.mean(axis=0)
        out.gradient_stderr = g.std(axis=0, ddof=1) / math.sqrt(n_paths)
    return out


def poisson_gradient_variance(config: RunConfig, phi: Observable, *, horizon: float, burn_in: float,
                              n_outer: int, n_inner: int, stream: int | None = None, threads=None,
                              block_size: int | None = 250) -> mc.Estimate:
    """``E_mu sum_j q_j (d_j Xi)^2`` by nested Monte Carlo.

    Outer samples approximate the invariant law (chains run for
    ``burn_in``).  For each, two independent inner gradient means are
    multiplied, which removes the inner-sample bias of the square.
    """
    if n_outer < 2 or n_inner < 1:
        raise ValueError("need n_outer >= 2 and n_inner >= 1")
    stream = mc.stream_id("poisson_variance") if stream is None else stream
    kw = dict(threads=threads, block_size=block_size)
    cfg_burn = config.with_(T=burn_in)
    outer = simulate(cfg_burn, n_outer, stream=mc.stream_id("outer", stream), **kw)["final"]
    starts = np.repeat(outer, n_inner, axis=0)
    steps = [_step_index(horizon, config.tau)]
    ga = _poisson_run(config, phi, starts, steps, len(starts), True, stream, **kw)["gradient"]
    gb = _poisson_run(config, phi, starts, steps, len(starts), True, stream, first_path=len(starts),
                      **kw)["gradient"]
    q = config.cov.eigenvalues(config.domain)
    ga = ga.reshape(n_outer, n_inner, -1).mean(axis=1)
    gb = gb.reshape(n_outer, n_inner, -1).mean(axis=1)
    return mc.mean_estimate(np.sum(q * ga * gb, axis=1))


# -- central limit theorem ------------------------------------------------------------

def clt_hypothesis_rule(config: RunConfig, T: float, gamma: float) -> dict:
    """Size of the step/horizon terms that must be small for the time-average CLT."""
    N = T / config.tau
    eps, tau = config.epsilon, config.tau
    first = math.sqrt(N) * eps ** (-gamma / 2) * tau ** min(1.0, 0.5 + gamma / 2)
    second = math.sqrt(N) * eps**-2 * tau**1.5
    return {"N": N, "gamma": gamma, "first_term": first, "second_term": second,
            "satisfied": bool(first < 1.0 and second < 1.0)}


class _LeftSum(Observer):
    def __init__(self, phi):
        self.phi = phi

    def start(self, u0, n_steps, tau):
        self.tau, self.N = tau, n_steps
        self.acc = np.zeros(len(u0))
        self.acc += self.phi.value(u0)

    def update(self, n, u, inc):
        if n < self.N:
            self.acc += self.phi.value(u)

    def result(self):
        return {"sum": self.tau * self.acc}


@dataclass
class CLTReport:
    """Normalised time averages ``Z_T`` over independent replicates."""

    z: np.ndarray
    T: float
    mu: mc.Estimate | None
    variance: float
    variance_stderr: float
    ks_statistic: float
    ks_pvalue: float
    ks_replicates: int
    hypothesis: dict
    asymptotic_variance: mc.Estimate | None = None

    @property
    def replicates(self) -> int:
        return len(self.z)

    @property
    def variance_ratio(self) -> float:
        if self.asymptotic_variance is None or self.variance == 0:
            return math.nan
        return self.asymptotic_variance.value / self.variance

    def as_dict(self) -> dict:
        return {
            "T": self.T,
            "replicates": self.replicates,
            "mean": mc.mean_estimate(self.z).as_dict() if self.replicates > 1 else None,
            "variance": {"value": self.variance, "stderr": self.variance_stderr,
                         "ci_low": self.variance - mc.Z95 * self.variance_stderr,
                         "ci_high": self.variance + mc.Z95 * self.variance_stderr,
                         "n_paths": self.replicates},
            "ks": {"statistic": self.ks_statistic, "pvalue": self.ks_pvalue,
                   "replicates": self.ks_replicates},
            "asymptotic_variance": None if self.asymptotic_variance is None
            else self.asymptotic_variance.as_dict(),
            "variance_ratio": self.variance_ratio,
            "hypothesis_rule": self.hypothesis,
            "mu": None if self.mu is None else self.mu.as_dict(),
        }


def clt_experiment(config: RunConfig, phi: Observable, T: float, replicates: int, *,
                   mu: mc.Estimate | None = None, ks_replicates: int | None = None,
                   gamma: float = 0.99, stream: int | None = None, threads=None,
                   block_size=None) -> CLTReport:
    """``Z_T = T^{-1/2} (tau sum_{n<N} phi(u_n) - T mu)`` for ``replicates`` independent paths.

    Without ``mu`` the replicates are centred by their own mean.  The KS
    distance is taken against the normal law fitted to the first
    ``ks_replicates`` replicates (all by default).
    """
    if replicates < 100:
        raise ValueError("need at least 100 replicates")
    rule = clt_hypothesis_rule(config, T, gamma)
    if not rule["satisfied"]:
        warnings.warn(f"step/horizon rule not small: {rule['first_term']:.3g}, {rule['second_term']:.3g}",
                      HypothesisWarning, stacklevel=2)
    cfg = config.with_(T=T)
    stream = mc.stream_id("clt") if stream is None else stream
    s = simulate(cfg, replicates, lambda: _LeftSum(phi), stream=stream, threads=threads,
                 block_size=block_size)["sum"]
    centre = s.mean() / T if mu is None else mu.value
    z = (s - T * centre) / math.sqrt(T)
    var = float(np.var(z, ddof=1))
    var_se = var * math.sqrt(2.0 / (len(z) - 1))
    k = len(z) if ks_replicates is None else min(ks_replicates, len(z))
    zk = z[:k]
    sd = float(np.std(zk, ddof=1))
    if sd > 0:
        ks = stats.kstest(zk, "norm", args=(float(zk.mean()), sd))
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    else:
        ks_stat, ks_p = 0.0, 1.0
    return CLTReport(z, T, mu, var, var_se, ks_stat, ks_p, k, rule)


@dataclass
class ErgodicReport:
    """Bundle of the long-run results for one configuration."""

    invariant_means: dict = field(default_factory=dict)
    gap_curve: GapCurve | None = None
    clt: CLTReport | None = None
    asymptotic_variance: mc.Estimate | None = None

    def as_dict(self) -> dict:
        return {
            "invariant_means": {k: v.as_dict() for k, v in self.invariant_means.items()},
            "gap_curve": None if self.gap_curve is None else self.gap_curve.as_dict(),
            "clt": None if self.clt is None else self.clt.as_dict(),
            "asymptotic_variance": None if self.asymptotic_variance is None
            else self.asymptotic_variance.as_dict(),
        }
