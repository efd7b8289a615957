import math

import numpy as np
import pytest
from conftest import cubic_config, linear_config, unit_vector

from sharpwave import montecarlo as mc
from sharpwave.integrators import (
    RunConfig,
    Scheme,
    Stepper,
    interpolate,
    read_trajectory_binary,
    read_trajectory_csv,
    run,
    run_coupled_pair,
    simulate,
    simulate_coupled,
    step_splitting,
    step_splitting_plain,
    step_tamed_exp_euler,
    windowed_sup_moments,
    write_trajectory_binary,
    write_trajectory_csv,
)
from sharpwave.noise_model import CovarianceSpec, ExplicitCovariance, convolution_variance
from sharpwave.scalar_dynamics import OddPolynomial
from sharpwave.spectral_core import SpectralField, build_domain

ZERO = ExplicitCovariance((0.0,))


def heat_factor(j, lam, t):
    return math.exp(-((j * math.pi) ** 2 + lam) * t)


@pytest.mark.parametrize("bad", [dict(T=0.25, tau=0.1), dict(epsilon=10.0), dict(tau=0.6, T=0.6),
                                 dict(delta=1.5), dict(epsilon=-1.0)])
def test_config_validation(bad, dom16):
    kw = dict(domain=dom16, cov=CovarianceSpec(1.0), poly=OddPolynomial.cubic(), epsilon=1.0, tau=0.1, T=1.0)
    kw.update(bad)
    with pytest.raises(ValueError):
        RunConfig(**kw)
    with pytest.raises(ValueError):
        RunConfig(dom16, CovarianceSpec(1.0), OddPolynomial.cubic(), 1.0, 0.1, 1.0,
                  initial=SpectralField.zeros(build_domain(1, "dirichlet", 8, 1.0)))


def test_pure_heat_semigroup(dom16, rng):
    # a1 = eps * lam makes the scalar flow the identity
    u0 = SpectralField(rng.standard_normal(16), dom16)
    cfg = RunConfig(dom16, ZERO, OddPolynomial.linear(1.0), 1.0, 0.01, 0.1, initial=u0)
    want = u0.coeffs * np.array([heat_factor(j, 1.0, 0.1) for j in range(1, 17)])
    np.testing.assert_allclose(run(cfg).final.coeffs, want, rtol=1e-12)


def test_linear_step_factor(dom16, rng):
    u0 = SpectralField(rng.standard_normal(16), dom16)
    cfg = RunConfig(dom16, ZERO, OddPolynomial.linear(3.0), 1.0, 0.01, 0.01, initial=u0)
    got = step_splitting(u0, cfg, rng).coeffs
    want = u0.coeffs * np.array([heat_factor(j, 1.0, 0.01) for j in range(1, 17)]) * math.exp((1.0 - 3.0) * 0.01)
    np.testing.assert_allclose(got, want, rtol=1e-14)


def test_noise_free_schemes_coincide(dom16, rng):
    u0 = SpectralField(rng.standard_normal(16), dom16)
    cfg = cubic_config(dom16, cov=ZERO, initial=u0)
    a = step_splitting(u0, cfg, np.random.default_rng(1))
    b = step_splitting_plain(u0, cfg, np.random.default_rng(2))
    np.testing.assert_array_equal(a.coeffs, b.coeffs)


def test_one_step_variances(dom16):
    cov, tau, n = CovarianceSpec(1.0), 0.02, 100_000
    cfg = linear_config(dom16, tau=tau, T=tau, cov=cov)
    zero = SpectralField.zeros(dom16, (n,))
    q, mu = cov.eigenvalues(dom16), dom16.shifted
    for step, var in [(step_splitting, convolution_variance(q, mu, tau)),
                      (step_tamed_exp_euler, convolution_variance(q, mu, tau)),
                      (step_splitting_plain, q * tau * np.exp(-2 * mu * tau))]:
        z = step(zero, cfg, np.random.default_rng(7)).coeffs
        assert np.all(np.abs(z.mean(axis=0)) < 4.5 * np.sqrt(var / n))
        assert np.all(np.abs((z**2).mean(axis=0) - var) < 4.5 * math.sqrt(2 / n) * var)


def test_tamed_linear_drift_is_exponential_euler(dom16, rng):
    u0 = SpectralField(rng.standard_normal(16), dom16)
    cfg = RunConfig(dom16, ZERO, OddPolynomial.linear(2.0), 1.0, 1e-3, 1e-3, scheme="tamed_exp_euler",
                    initial=u0, delta=1e-12)
    got = step_tamed_exp_euler(u0, cfg, rng).coeffs
    S = np.array([heat_factor(j, 1.0, 1e-3) for j in range(1, 17)])
    np.testing.assert_allclose(got, S * u0.coeffs * (1 + 1e-3 * (1.0 - 2.0)), rtol=1e-11)


def test_tamed_vs_splitting_local_difference_is_second_order(dom16, rng):
    u0 = SpectralField(rng.standard_normal(16), dom16)
    a = 1.0 - 2.0
    for tau in (0.02, 0.01, 0.005):
        cfg = RunConfig(dom16, ZERO, OddPolynomial.linear(2.0), 1.0, tau, tau, initial=u0,
                        delta=1e-9)
        x = step_splitting(u0, cfg, np.random.default_rng(3)).coeffs
        y = step_tamed_exp_euler(u0, cfg, np.random.default_rng(3)).coeffs
        S = np.exp(-dom16.shifted * tau)
        keep = S > 1e-100
        # per mode the gap is S u0 (e^{a tau} - 1 - a tau) = S u0 (a tau)^2 / 2 (1 + O(tau))
        ratio = (x - y)[keep] / (S * u0.coeffs)[keep] / ((a * tau) ** 2 / 2)
        np.testing.assert_allclose(ratio, 1.0, atol=abs(a) * tau)


def test_zero_steps_and_determinism(dom16):
    cfg = cubic_config(dom16)
    z = run(cfg.with_(T=0.0))
    assert len(z) == 1 and np.array_equal(z.final.coeffs, cfg.initial.coeffs)
    np.testing.assert_array_equal(run(cfg).states, run(cfg).states)
    assert not np.array_equal(run(cfg).final.coeffs, run(cfg, path=1).final.coeffs)
    assert not np.array_equal(run(cfg).final.coeffs, run(cfg.with_(master_seed=1)).final.coeffs)


def test_snapshots(dom16):
    cfg = cubic_config(dom16)
    tr = run(cfg, [0.1])
    np.testing.assert_allclose(tr.times, [0.0, 0.1, 0.2])
    full = run(cfg, retain_all=True)
    np.testing.assert_array_equal(tr.states, full.states[[0, 5, 10]])
    with pytest.raises(ValueError):
        run(cfg, [0.11])


def test_simulate_threads_and_path_offsets(dom16):
    cfg = cubic_config(dom16)
    a = simulate(cfg, 40, block_size=8, threads=1)["final"]
    b = simulate(cfg, 40, block_size=8, threads=4)["final"]
    np.testing.assert_array_equal(a, b)
    tail = simulate(cfg, 20, first_path=20, block_size=8)["final"]
    np.testing.assert_allclose(tail, a[20:], rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(run(cfg, path=7).final.coeffs, a[7], rtol=1e-13, atol=1e-15)


def test_noise_source_chunking_is_invisible():
    whole = mc.NoiseSource(5, 9, range(3), 4, 10, max_buffer=10**6)
    tiny = mc.NoiseSource(5, 9, range(3), 4, 10, max_buffer=1)
    for _ in range(10):
        np.testing.assert_array_equal(whole.next(), tiny.next())
    with pytest.raises(RuntimeError):
        tiny.next()


def test_coupled_pair_ratio_one_is_identical(dom16):
    c, f = run_coupled_pair(cubic_config(dom16), 1)
    np.testing.assert_array_equal(c.states, f.states)


def test_coupled_fine_chain_is_the_plain_fine_run(dom16):
    cfg = cubic_config(dom16)
    res = simulate_coupled(cfg, 16, cfg.tau, 4, block_size=16)
    fine = simulate(cfg.with_(tau=cfg.tau / 4), 16, block_size=16)["final"]
    np.testing.assert_array_equal(res["fine_final"], fine)


def test_linear_coupled_means_match(dom16):
    cfg = linear_config(dom16, tau=0.05, T=0.5)
    res = simulate_coupled(cfg, 20_000, cfg.tau, 4)
    d = res["coarse_final"] - res["fine_final"]
    est = mc.mean_estimates(d)
    assert all(abs(e.value) < 4.5 * e.stderr + 1e-15 for e in est)


def test_self_convergence(dom16):
    cfg = cubic_config(dom16, tau=0.05, T=0.5)
    gaps = []
    for r in (2, 4, 8):
        res = simulate_coupled(cfg.with_(tau=cfg.tau / r * 2, c3=math.inf), 400, cfg.tau / r * 2, 2)
        gaps.append(np.mean(np.sum((res["coarse_final"] - res["fine_final"]) ** 2, axis=1)))
    assert gaps[0] > gaps[1] > gaps[2]


def test_interpolation_endpoints_and_linear_midpoint(dom16, rng):
    cfg = cubic_config(dom16)
    tr = run(cfg, retain_all=True, keep_increments=True)
    np.testing.assert_array_equal(interpolate(tr, 0.04).coeffs, tr.states[2])
    np.testing.assert_allclose(interpolate(tr, 0.06 - 1e-13).coeffs, tr.states[3], atol=1e-9)
    u0 = SpectralField(rng.standard_normal(16), dom16)
    lin = RunConfig(dom16, ZERO, OddPolynomial.linear(2.0), 1.0, 0.02, 0.02, initial=u0)
    tl = run(lin, retain_all=True, keep_increments=True)
    want = u0.coeffs * np.array([heat_factor(j, 1.0, 0.01) for j in range(1, 17)]) * math.exp(-0.01)
    np.testing.assert_allclose(interpolate(tl, 0.01).coeffs, want, rtol=1e-13)
    with pytest.raises(ValueError):
        interpolate(tl, 0.5)
    with pytest.raises(ValueError):
        interpolate(run(lin), 0.01)


@pytest.mark.parametrize("dim", [1, 2])
def test_export_round_trip(dim, tmp_path):
    d = build_domain(dim, "neumann", 6, 1.0)
    cfg = cubic_config(d, initial=SpectralField.unit(d, (1,) * dim))
    tr = run(cfg, retain_all=True)
    write_trajectory_csv(tr, tmp_path / "t.csv")
    write_trajectory_binary(tr, tmp_path / "t.bin")
    for back in (read_trajectory_csv(tmp_path / "t.csv", d), read_trajectory_binary(tmp_path / "t.bin", d)):
        np.testing.assert_array_equal(back.states, tr.states)
        np.testing.assert_array_equal(back.times, tr.times)
    assert (tmp_path / "t.bin").read_bytes()[:8] == b"SHRPWAV1"


def test_schemes_invariant_variances_converge(dom16):
    # fixed points of v = rho^2 v + s^2 for the linear case, per scheme
    q, mu, B = CovarianceSpec(1.0).eigenvalues(dom16), dom16.shifted, dom16.shifted + 1.0
    gaps = []
    for tau in (0.04, 0.02, 0.01):
        rho = np.exp(-B * tau)
        conv = convolution_variance(q, mu, tau) / (1 - rho**2)
        plain = q * tau * np.exp(-2 * mu * tau) / (1 - rho**2)
        gaps.append(np.abs(conv - plain).max())
    assert gaps[0] > gaps[1] > gaps[2]
    cfg = linear_config(dom16, a1=2.0, tau=0.04, T=2.0, initial=SpectralField.zeros(dom16))
    n = 20_000
    for scheme, var in (("splitting_convolution", None), ("splitting_plain", None)):
        u = simulate(cfg.with_(scheme=scheme), n)["final"]
        rho = np.exp(-(mu + 1.0) * 0.04)
        s2 = convolution_variance(q, mu, 0.04) if scheme != "splitting_plain" else q * 0.04 * np.exp(-2 * mu * 0.04)
        want = s2 * (1 - rho ** (2 * cfg.n_steps)) / (1 - rho**2)
        assert np.all(np.abs((u**2).mean(axis=0) - want) < 4.5 * math.sqrt(2 / n) * want)


def test_moment_windows_plateau(dom16):
    cfg = cubic_config(dom16, tau=1 / 16, T=10.0)
    a, b = windowed_sup_moments(cfg, 200, [(5.0, 7.5), (7.5, 10.0)])
    assert abs(b.value - a.value) < 0.1 * a.value + a.half_width + b.half_width
    with pytest.raises(ValueError):
        windowed_sup_moments(cfg, 10, [(0.0, 11.0)])


def test_stepper_linearization_matches_finite_differences(dom16, rng):
    for scheme in Scheme:
        cfg = cubic_config(dom16, scheme=scheme)
        st = Stepper(cfg)
        u = rng.standard_normal((3, 16))
        v = rng.standard_normal((3, 16))
        h = 1e-6
        fd = (st.deterministic(u + h * v) - st.deterministic(u - h * v)) / (2 * h)
        np.testing.assert_allclose(st.linearize(u).first(v) / st.decay, fd, rtol=1e-6, atol=1e-8)
        w = rng.standard_normal((3, 16))
        lin = st.linearize(u)
        lhs = np.sum(lin.first(v) * w, axis=1)
        rhs = np.sum(v * lin.first_adjoint(w), axis=1)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_unit_vector_helper():
    assert unit_vector(3, 1, 2.0).tolist() == [0.0, 2.0, 0.0]
