import numpy as np
import pytest

from sharpwave.integrators import RunConfig
from sharpwave.noise_model import CovarianceSpec
from sharpwave.scalar_dynamics import OddPolynomial
from sharpwave.spectral_core import SpectralField, build_domain


@pytest.fixture
def dom16():
    return build_domain(1, "dirichlet", 16, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cubic_config(domain, tau=0.02, T=0.2, seed=0, cov=None, **kw):
    return RunConfig(domain, cov if cov is not None else CovarianceSpec(1.0), OddPolynomial.cubic(), 1.0, tau, T,
                     initial=kw.pop("initial", SpectralField.unit(domain, domain.index_1d[0])),
                     master_seed=seed, **kw)


def linear_config(domain, a1=2.0, tau=0.02, T=0.2, seed=0, cov=None, **kw):
    return RunConfig(domain, cov if cov is not None else CovarianceSpec(1.0), OddPolynomial.linear(a1), 1.0,
                     tau, T, initial=kw.pop("initial", SpectralField.unit(domain, domain.index_1d[0])),
                     master_seed=seed, **kw)


def unit_vector(n, k=0, value=1.0):
    v = np.zeros(n)
    v[k] = value
    return v


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
