import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sharpwave.noise_model import (
    CovarianceSpec,
    ExplicitCovariance,
    aggregate_convolution,
    check_regularity,
    convolution_variance,
    refine_convolution_increments,
    sample_convolution_increment,
    sample_plain_increment,
)
from sharpwave.spectral_core import build_domain

# q (1 - e^{-2 mu tau}) / (2 mu) at q = 1, mu = 10, tau = 0.1, evaluated with mpmath at 30 digits
SIGMA2_MU10_TAU01 = 0.043233235838169365405


def test_covariance_eigenvalues(dom16):
    q = CovarianceSpec(1.0, cap=0.05).eigenvalues(dom16)
    np.testing.assert_allclose(q, np.minimum(0.05, 1.0 / dom16.shifted), rtol=1e-15)
    assert np.all(q > 0) and np.all(q <= 0.05)
    assert np.all(CovarianceSpec(0.0).eigenvalues(dom16) == 1.0)


@pytest.mark.parametrize("bad", [dict(decay_exponent=-0.1), dict(decay_exponent=1.5), dict(cap=0.0),
                                 dict(beta_target=0.0)])
def test_covariance_rejects(bad):
    with pytest.raises(ValueError):
        CovarianceSpec(**bad)


@pytest.mark.parametrize("dim,s,beta_sup,white", [(1, 1.0, 1.5, False), (1, 0.0, 0.5, True), (2, 0.8, 0.8, False)])
def test_regularity_ranges(dim, s, beta_sup, white):
    d = build_domain(dim, "dirichlet", 8, 1.0)
    rep = check_regularity(CovarianceSpec(s, beta_target=0.4), d)
    assert rep.beta_admissible_sup == pytest.approx(beta_sup, abs=1e-15)
    assert rep.space_time_white is white
    assert math.isfinite(rep.trace_value) and math.isfinite(rep.nondegeneracy_constant)
    q = CovarianceSpec(s).eigenvalues(d)
    assert rep.nondegeneracy_constant == pytest.approx(np.max(1 / np.sqrt(q * d.shifted)), rel=1e-14)


def test_degenerate_noise_has_infinite_nondegeneracy_constant(dom16):
    rep = check_regularity(ExplicitCovariance((0.0,) + (1.0,) * 15), dom16)
    assert rep.nondegeneracy_constant == math.inf


def test_convolution_variance_oracle():
    got = convolution_variance(np.array([1.0]), np.array([10.0]), 0.1)[0]
    assert got == pytest.approx(SIGMA2_MU10_TAU01, rel=1e-15)
    assert convolution_variance(np.array([2.0]), np.array([3.0]), 1e3)[0] == pytest.approx(2.0 / 6.0, rel=1e-15)


def test_zero_modes_give_exact_zeros(dom16, rng):
    cov = ExplicitCovariance((0.0,) * 8 + (1.0,) * 8)
    z = sample_convolution_increment(dom16, cov, 0.1, rng, size=(50,)).coeffs
    assert not np.any(z[:, :8]) and np.all(z[:, 8:] != 0)
    assert not np.any(sample_plain_increment(dom16, ExplicitCovariance((0.0,)), 0.1, rng).coeffs)


@pytest.mark.parametrize("sampler,var", [
    (sample_plain_increment, lambda q, mu, tau: q * tau),
    (sample_convolution_increment, convolution_variance),
])
def test_empirical_variance_within_four_standard_errors(sampler, var, dom16, rng):
    cov = CovarianceSpec(1.0)
    tau = 0.25
    n = 100_000
    z = sampler(dom16, cov, tau, rng, size=(n,)).coeffs
    want = var(cov.eigenvalues(dom16), dom16.shifted, tau)
    emp = (z**2).mean(axis=0)
    # the standard error of a Gaussian second moment is sqrt(2) sigma^2 / sqrt(n)
    assert np.all(np.abs(emp - want) < 4 * math.sqrt(2 / n) * want)


def test_plain_increment_brownian_scaling(dom16, rng):
    z = sample_plain_increment(dom16, ExplicitCovariance((1.0,)), 0.25, rng, size=(100_000,)).coeffs
    assert z.var() == pytest.approx(0.25, rel=0.01)


def test_refine_ratio_one(dom16, rng):
    fine, agg = refine_convolution_increments(0.1, 1, dom16, CovarianceSpec(1.0), rng)
    assert len(fine) == 1
    np.testing.assert_array_equal(agg.coeffs, fine[0].coeffs)
    with pytest.raises(ValueError):
        refine_convolution_increments(0.1, 0, dom16, CovarianceSpec(1.0), rng)


def test_refine_aggregate_variance_is_exact(dom16):
    q = CovarianceSpec(1.0).eigenvalues(dom16)
    mu, tau = dom16.shifted, 0.1
    half = convolution_variance(q, mu, tau / 2)
    np.testing.assert_allclose(half * np.exp(-2 * mu * tau / 2) + half, convolution_variance(q, mu, tau), rtol=1e-14)


def test_refine_covariance_with_first_fine_increment(dom16, rng):
    cov, tau, n = CovarianceSpec(1.0), 0.1, 100_000
    fine, agg = refine_convolution_increments(tau, 2, dom16, cov, rng, size=(n,))
    mu = dom16.shifted
    want = np.exp(-mu * tau / 2) * convolution_variance(cov.eigenvalues(dom16), mu, tau / 2)
    emp = (agg.coeffs * fine[0].coeffs).mean(axis=0)
    sd = np.sqrt(convolution_variance(cov.eigenvalues(dom16), mu, tau) * convolution_variance(
        cov.eigenvalues(dom16), mu, tau / 2) + want**2) / math.sqrt(n)
    assert np.all(np.abs(emp - want) < 4.5 * sd)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.floats(1e-4, 1.0))
def test_aggregation_is_associative(r, tau):
    d = build_domain(1, "dirichlet", 8, 1.0)
    rng = np.random.default_rng(r)
    fine = rng.standard_normal((2 * r, 8))
    direct = aggregate_convolution(fine, d.shifted, tau)
    halves = np.stack([aggregate_convolution(fine[:r], d.shifted, tau),
                       aggregate_convolution(fine[r:], d.shifted, tau)])
    np.testing.assert_allclose(aggregate_convolution(halves, d.shifted, r * tau), direct, rtol=1e-12, atol=1e-14)
