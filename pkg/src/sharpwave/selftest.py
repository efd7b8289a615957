"""Fast closed-form and exact-identity checks across all modules.

Each check compares against a value computed independently of the code
under test (e.g. damping factors from ``(j pi)^2`` directly), so a
perturbed semigroup is caught by name.  Monte Carlo checks use at most
10^4 paths and 4.5-standard-error bands.
"""

from __future__ import annotations

import math
import os
import tempfile
import time
import warnings
from contextlib import contextmanager
from unittest import mock

import numpy as np

from . import montecarlo as mc
from . import spectral_core
from .ergodic_stats import clt_experiment, ergodic_gap_curve, estimate_invariant_mean, estimate_poisson
from .harness import Check
from .integrators import (
    RunConfig,
    Stepper,
    interpolate,
    read_trajectory_binary,
    read_trajectory_csv,
    run,
    run_coupled_pair,
    write_trajectory_binary,
    write_trajectory_csv,
)
from .noise_model import CovarianceSpec, ExplicitCovariance, check_regularity, convolution_variance
from .observables import BoundedCosine, LinearFunctional
from .scalar_dynamics import FlowMethod, FlowParams, OddPolynomial, check_taming_conditions, flow
from .sensitivity import estimate_dX, evolve_first_variation, evolve_second_variation
from .spectral_core import SpectralField, build_domain

__all__ = ["selftest", "perturbed_semigroup", "MUTATIONS"]


@contextmanager
def perturbed_semigroup(rel: float = 1e-3):
    """Mutation hook: every semigroup factor uses rates scaled by ``1 + rel``."""
    orig = spectral_core.semigroup_factors

    def patched(domain, t):
        return orig(domain, t * (1.0 + rel))

    with mock.patch.object(spectral_core, "semigroup_factors", patched):
        yield


MUTATIONS = {"semigroup": perturbed_semigroup}


def _close(a, b, rtol, atol=0.0) -> bool:
    return bool(np.allclose(a, b, rtol=rtol, atol=atol))


def _fmt(x) -> str:
    a = np.atleast_1d(np.asarray(x, dtype=float))
    return np.array2string(a[:4], precision=10) + (" ..." if a.size > 4 else "")


class _Runner:
    def __init__(self):
        self.checks: list[Check] = []

    def add(self, module, name, passed, expected, got):
        self.checks.append(Check(name, bool(passed), str(expected), str(got), module))

    def guard(self, module, name, fn):
        try:
            fn()
        except Exception as exc:  # a crashing check is a failed check
            self.add(module, name, False, "no exception", f"{type(exc).__name__}: {exc}")


def _heat_factor(j, lam, t):
    return math.exp(-((j * math.pi) ** 2 + lam) * t)


def _checks(r: _Runner, seed: int) -> None:
    d = build_domain(1, "dirichlet", 16, lam=1.0)
    dn = build_domain(1, "neumann", 16, lam=1.0)
    d2 = build_domain(2, "dirichlet", 8, lam=1.0)
    rng = np.random.default_rng(seed)

    # spectral_core
    def transforms():
        for dom in (d, dn, d2):
            c = rng.standard_normal(dom.n_modes)
            back = dom.analyze(dom.synthesize(c))
            r.add("spectral_core", f"round_trip[{dom.dim}d-{dom.bc.value}]", _close(back, c, 0, 1e-12),
                  "identity", f"max err {np.abs(back - c).max():.2e}")
    r.guard("spectral_core", "round_trip", transforms)

    def semigroup():
        t = 0.03
        v = spectral_core.apply_semigroup(SpectralField.unit(d, 3), t)
        want = _heat_factor(3, 1.0, t)
        r.add("spectral_core", "apply_semigroup", _close(v.coeffs[2], want, 1e-13),
              want, v.coeffs[2])
    r.guard("spectral_core", "apply_semigroup", semigroup)

    # noise_model
    def noise():
        cov = CovarianceSpec(1.0)
        rep = check_regularity(cov, d)
        r.add("noise_model", "beta_admissible_sup", rep.beta_admissible_sup == 1.5, 1.5, rep.beta_admissible_sup)
        tau = 0.01
        mu = np.array([(j * math.pi) ** 2 + 1.0 for j in range(1, 17)])
        want = mu ** -1.0 * (1 - np.exp(-2 * mu * tau)) / (2 * mu)
        got = convolution_variance(cov.eigenvalues(d), d.shifted, tau)
        r.add("noise_model", "convolution_variance", _close(got, want, 1e-13), _fmt(want), _fmt(got))
        st = Stepper(RunConfig(d, cov, OddPolynomial.linear(1.0), 1.0, tau, tau))
        z = rng.standard_normal((10_000, d.n_modes)) * st.noise_sd
        emp = z.var(axis=0, ddof=1)
        se = want * math.sqrt(2 / 9_999)
        r.add("noise_model", "sampled_variance", bool(np.all(np.abs(emp - want) < 4.5 * se)),
              "within 4.5 SE", f"max |z| {np.max(np.abs(emp - want) / se):.2f}")
    r.guard("noise_model", "noise", noise)

    # scalar_dynamics
    def flows():
        p = FlowParams(1.0, 0.0, OddPolynomial.cubic())
        got = float(flow(2.0, 1.0, p))
        want = 2.0 / math.sqrt(math.exp(-2) + 4 * (1 - math.exp(-2)))
        r.add("scalar_dynamics", "closed_form_flow", abs(got - want) < 1e-13, want, got)
        pr = FlowParams(0.5, 2.0, OddPolynomial.cubic(), method=FlowMethod.STIFF_ADAPTIVE)
        pc = FlowParams(0.5, 2.0, OddPolynomial.cubic())
        xi = np.array([-3.0, -0.4, 0.2, 1.7])
        a, b = flow(xi, 0.3, pc), flow(xi, 0.3, pr)
        r.add("scalar_dynamics", "flow_vs_radau", _close(a, b, 1e-7), _fmt(b), _fmt(a))
        rep = check_taming_conditions(OddPolynomial.cubic(), [0.01, 0.1], np.linspace(-5, 5, 201))
        r.add("scalar_dynamics", "taming_conditions", rep.ok, "no violations", rep.violations)
    r.guard("scalar_dynamics", "flow", flows)

    # integrators
    u0 = SpectralField(rng.standard_normal(d.n_modes), d)
    zero = ExplicitCovariance((0.0,))

    def heat():
        cfg = RunConfig(d, zero, OddPolynomial.linear(1.0), 1.0, 0.01, 0.1, initial=u0)
        tr = run(cfg)
        want = u0.coeffs * np.array([_heat_factor(j, 1.0, 0.1) for j in range(1, 17)])
        r.add("integrators", "pure_heat_semigroup", _close(tr.final.coeffs, want, 1e-11), _fmt(want),
              _fmt(tr.final.coeffs))
        cfg2 = RunConfig(d, zero, OddPolynomial.linear(3.0), 1.0, 0.01, 0.1, initial=u0)
        want2 = want * math.exp((1.0 - 3.0) * 0.1)
        got2 = run(cfg2).final.coeffs
        r.add("integrators", "linear_step_factor", _close(got2, want2, 1e-11), _fmt(want2), _fmt(got2))
        plain = run(cfg2.with_(scheme="splitting_plain")).final.coeffs
        r.add("integrators", "plain_equals_convolution_without_noise", np.array_equal(plain, got2),
              "bitwise equal", f"max diff {np.abs(plain - got2).max():.1e}")
    r.guard("integrators", "heat", heat)

    cub = RunConfig(d, CovarianceSpec(1.0), OddPolynomial.cubic(), 1.0, 0.02, 0.2, initial=u0, master_seed=seed)

    def integrator_identities():
        a, b = run(cub), run(cub)
        r.add("integrators", "determinism", np.array_equal(a.states, b.states), "bitwise equal", "")
        c, f = run_coupled_pair(cub, 1)
        r.add("integrators", "coupled_ratio_one", np.array_equal(c.final.coeffs, f.final.coeffs),
              "bitwise equal", f"max diff {np.abs(c.final.coeffs - f.final.coeffs).max():.1e}")
        tr = run(cub, retain_all=True, keep_increments=True)
        ends = max(np.abs(interpolate(tr, 0.04).coeffs - tr.states[2]).max(),
                   np.abs(interpolate(tr, 0.06 - 1e-13).coeffs - tr.states[3]).max())
        r.add("integrators", "interpolation_endpoints", ends < 1e-9, "< 1e-9", f"{ends:.2e}")
        z = run(cub.with_(T=0.0))
        r.add("integrators", "zero_steps", len(z) == 1 and np.array_equal(z.final.coeffs, u0.coeffs),
              "only u0", len(z))
        with tempfile.TemporaryDirectory() as tmp:
            write_trajectory_binary(tr, os.path.join(tmp, "t.bin"))
            write_trajectory_csv(tr, os.path.join(tmp, "t.csv"))
            b1 = read_trajectory_binary(os.path.join(tmp, "t.bin"), d)
            c1 = read_trajectory_csv(os.path.join(tmp, "t.csv"), d)
        r.add("integrators", "export_round_trip",
              np.array_equal(b1.states, tr.states) and np.array_equal(c1.states, tr.states), "exact", "")
    r.guard("integrators", "identities", integrator_identities)

    # sensitivity
    def variations():
        tam = cub.with_(scheme="tamed_exp_euler")
        tr = run(tam, retain_all=True)
        h1, h2 = rng.standard_normal(16), rng.standard_normal(16)
        e1 = evolve_first_variation(tr, h1)
        e2 = evolve_first_variation(tr, 2 * h1)
        r.add("sensitivity", "first_variation_linear", np.array_equal(e2.eta, 2 * e1.eta), "bitwise", "")
        e0 = evolve_first_variation(tr, np.zeros(16))
        r.add("sensitivity", "first_variation_zero", not np.any(e0.eta), "all zero", "")
        f2 = evolve_first_variation(tr, h2)
        za = evolve_second_variation(tr, e1, f2).zeta
        zb = evolve_second_variation(tr, f2, e1).zeta
        r.add("sensitivity", "second_variation_symmetric", np.array_equal(za, zb), "bitwise",
              f"{np.abs(za - zb).max():.1e}")
        lin = RunConfig(d, CovarianceSpec(1.0), OddPolynomial.linear(2.0), 1.0, 0.02, 0.2,
                        scheme="tamed_exp_euler", initial=u0)
        g = np.zeros(16)
        g[0] = 1.0
        h = np.zeros(16)
        h[0] = 0.7
        est = estimate_dX(lin, None, h, LinearFunctional(g), 100)
        rho = _heat_factor(1, 1.0, 0.02) * (1 + 0.02 * (1.0 - 2.0) / (1 + 0.02))
        want = 0.7 * rho**10
        r.add("sensitivity", "linear_dX_closed_form", abs(est.value - want) < 1e-12 * abs(want) + 1e-15,
              want, est.value)
    r.guard("sensitivity", "variations", variations)

    # ergodic_stats
    def ergodic():
        lin = RunConfig(d, CovarianceSpec(1.0), OddPolynomial.linear(2.0), 1.0, 0.02, 1.0,
                        initial=SpectralField.zeros(d), master_seed=seed)
        g = np.zeros(16)
        g[0] = 1.0
        phi = BoundedCosine(g, 1.0)
        m = estimate_invariant_mean(lin, phi, 0.5, 2.0, 4000)
        B = (math.pi**2 + 2.0)
        q = 1.0 / (math.pi**2 + 1.0)
        rho = _heat_factor(1, 1.0, 0.02) * math.exp(-0.02)
        var = q * (1 - math.exp(-2 * (math.pi**2 + 1) * 0.02)) / (2 * (math.pi**2 + 1)) / (1 - rho**2)
        want = math.exp(-var / 2)
        r.add("ergodic_stats", "linear_invariant_mean", abs(m.value - want) < 4.5 * m.stderr + 1e-12,
              f"{want:.6f} (continuous {math.exp(-q / (4 * B)):.6f})", m.as_dict())
        x = rng.standard_normal(16)
        gap = ergodic_gap_curve(cub, x, x, phi, [0.1, 0.2], 200, coupling="common")
        r.add("ergodic_stats", "gap_equal_starts", all(dd.value == 0 for dd in gap.differences), 0.0,
              [dd.value for dd in gap.differences])
        const = BoundedCosine(g, 0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            clt = clt_experiment(cub.with_(T=0.2), const, 2.0, 100, mu=mc.Estimate(1.0, 0.0, 1))
        r.add("ergodic_stats", "clt_constant_observable", bool(np.all(np.abs(clt.z) < 1e-12)), "Z == 0",
              _fmt(clt.z))
        lin0 = RunConfig(d, ExplicitCovariance((0.0,)), OddPolynomial.linear(2.0), 1.0, 0.005, 1.0)
        x0 = np.zeros(16)
        x0[0] = 1.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            p = estimate_poisson(lin0, LinearFunctional(g), x0, [2.0, 4.0], 2, mu=mc.Estimate(0.0, 0.0, 1))
        r.add("ergodic_stats", "poisson_linear_closed_form", abs(p.value.value - 1 / B) < 1e-3 / B,
              1 / B, p.value.value)
    r.guard("ergodic_stats", "ergodic", ergodic)


def selftest(seed: int = 0, mutation: str | None = None) -> tuple[list[Check], float]:
    """Run every check; returns ``(checks, seconds)``.  ``mutation`` names a hook in ``MUTATIONS``."""
    t0 = time.perf_counter()
    r = _Runner()
    if mutation is None:
        _checks(r, seed)
    else:
        if mutation not in MUTATIONS:
            raise ValueError(f"unknown mutation {mutation!r}; choose from {sorted(MUTATIONS)}")
        with MUTATIONS[mutation]():
            _checks(r, seed)
    return r.checks, time.perf_counter() - t0
