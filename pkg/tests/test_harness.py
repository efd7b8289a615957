import json
import math

import numpy as np
import pytest
from conftest import cubic_config, linear_config, unit_vector

from sharpwave import montecarlo as mc
from sharpwave.harness import (
    Check,
    ExperimentSpec,
    ResultRecord,
    co_scaled_config,
    config_hash,
    eps_scaling_study,
    fit_slope,
    level_paths,
    weak_error_cells,
    weak_order_sweep,
)
from sharpwave.noise_model import CovarianceSpec
from sharpwave.observables import BoundedCosine, LinearFunctional
from sharpwave.scalar_dynamics import OddPolynomial
from sharpwave.spectral_core import build_domain


@pytest.fixture
def dom8():
    return build_domain(1, "dirichlet", 8, 1.0)


def sweep_spec(cfg, **kw):
    base = dict(experiment="weak_order", base=cfg, taus=(cfg.tau, cfg.tau / 2), n_paths=400, min_paths=64,
                observables=(BoundedCosine(unit_vector(cfg.domain.n_modes), 1.0),), expected_slope=(0.5, 1.5))
    base.update(kw)
    return ExperimentSpec(**base)


def test_config_hash_tracks_every_field(dom8):
    cfg = cubic_config(dom8, tau=0.05, T=0.5)
    base = config_hash(sweep_spec(cfg).describe())
    variants = [
        sweep_spec(cfg.with_(master_seed=1)),
        sweep_spec(cfg.with_(epsilon=0.5)),
        sweep_spec(cfg.with_(cov=CovarianceSpec(0.5))),
        sweep_spec(cfg.with_(poly=OddPolynomial((-1.0, 2.0)))),
        sweep_spec(cfg.with_(scheme="tamed_exp_euler")),
        sweep_spec(cfg, n_paths=401),
        sweep_spec(cfg, ratio=128),
        sweep_spec(cfg, taus=(0.05,)),
        sweep_spec(cfg, params={"x": 1}),
    ]
    hashes = {config_hash(s.describe()) for s in variants}
    assert base not in hashes and len(hashes) == len(variants)
    assert config_hash(sweep_spec(cfg).describe()) == base and len(base) == 40


@pytest.mark.parametrize("bad", [dict(taus=()), dict(taus=(0.1, 0.2, 0.05)), dict(taus=(-0.1,)), dict(ratio=32),
                                 dict(ratio=96), dict(n_paths=1)])
def test_spec_validation(bad, dom8):
    with pytest.raises(ValueError):
        sweep_spec(cubic_config(dom8, tau=0.05, T=0.5), **bad)
    with pytest.raises(ValueError):
        ExperimentSpec("eps_scaling", cubic_config(dom8), epsilons=(1.0, 0.5))


def test_step_flags(dom8):
    cfg = cubic_config(dom8, tau=0.05, T=0.5)
    assert sweep_spec(cfg).step_flags() == []
    flags = sweep_spec(cfg, taus=(0.6, 0.5, 0.05)).step_flags()
    assert [f["tau"] for f in flags] == [0.6]


def test_level_paths():
    assert level_paths(0.1, 0.1, 1000, 10) == 1000
    assert level_paths(0.025, 0.1, 1000, 10) == 250
    assert level_paths(1e-4, 0.1, 1000, 10) == 10


def test_fit_slope_recovers_power_law():
    x = np.array([0.1, 0.05, 0.025, 0.0125])
    fit = fit_slope(x, 3.0 * x**1.5)
    assert fit["slope"] == pytest.approx(1.5, abs=1e-12) and fit["r_squared"] == pytest.approx(1.0)
    assert fit_slope(x[:2], x[:2])["slope"] == pytest.approx(1.0)
    assert math.isnan(fit_slope(x[:1], x[:1])["slope"])


def test_linear_coupled_chains_agree_pathwise(dom8):
    # exact convolution increments aggregate exactly, so only rounding separates the levels
    cfg = linear_config(dom8, a1=1.0, tau=0.05, T=0.5)
    cells, levels = weak_error_cells(cfg, [0.05], [LinearFunctional(unit_vector(8))], ratio=64, n_paths=2000,
                                     min_paths=256)
    e = cells[0][0]
    assert abs(e.value) < 1e-13 and e.stderr < 1e-13
    assert len(levels) == 6


def test_telescoping_sum_matches_level_estimates(dom8):
    cfg = cubic_config(dom8, tau=0.05, T=0.5)
    cells, levels = weak_error_cells(cfg, [0.05, 0.025], [BoundedCosine(unit_vector(8))], ratio=64, n_paths=400,
                                     min_paths=64)
    shared = [levels[0.05 * 2.0**-l][0].value for l in range(1, 6)]
    assert len(levels) == 7
    assert cells[0][0].value == pytest.approx(levels[0.05][0].value + math.fsum(shared), rel=1e-12)
    assert levels[0.05 * 2**-6][0].n_paths == 64


def test_inconclusive_when_the_noise_floor_swamps_the_error(dom8):
    cfg = cubic_config(dom8, tau=0.05, T=0.5)
    rec = weak_order_sweep(sweep_spec(cfg, n_paths=4, min_paths=4))
    assert rec.status == "inconclusive" and not rec.passed
    assert rec.fits["observable_0"]["status"] == "inconclusive"
    assert any("CI swamps" in w for w in rec.warnings)


def test_sweep_is_deterministic_and_records_cells(dom8, tmp_path):
    cfg = cubic_config(dom8, tau=0.05, T=0.5)
    a = weak_order_sweep(sweep_spec(cfg))
    b = weak_order_sweep(sweep_spec(cfg), threads=3)
    assert a.to_json(include_runtime=False) == b.to_json(include_runtime=False)
    assert len(a.cells) == 2 and a.cells[0]["reference_tau"] == pytest.approx(0.05 / 64)
    paths = a.write(str(tmp_path))
    summary = json.loads(open(paths["json"]).read())
    assert summary["config_hash"] == a.config_hash
    assert open(paths["csv"]).readline().startswith("tau,epsilon,observable,weak_error")


def test_co_scaled_config(dom8):
    cfg = cubic_config(dom8, tau=0.05, T=0.5)
    assert co_scaled_config(cfg, 1.0) is cfg
    half = co_scaled_config(cfg, 0.5)
    assert half.epsilon * half.lam == pytest.approx(cfg.epsilon * cfg.lam)
    assert half.step_ratio == pytest.approx(cfg.step_ratio, rel=0.1)
    assert half.n_steps * half.tau == pytest.approx(cfg.T)
    assert half.initial.domain == half.domain


def test_eps_cell_at_base_equals_weak_order_cell(dom8):
    cfg = cubic_config(dom8, tau=0.05, T=0.5)
    obs = (BoundedCosine(unit_vector(8), 1.0),)
    sweep = weak_order_sweep(sweep_spec(cfg, taus=(0.05,), observables=obs))
    eps = eps_scaling_study(ExperimentSpec("eps_scaling", cfg, epsilons=(1.0, 0.5, 0.25), n_paths=400, min_paths=64,
                                           observables=obs))
    row = next(r for r in eps.cells if r["epsilon"] == 1.0)
    assert row["signed_error"] == sweep.cells[0]["signed_error"]
    assert row["stderr"] == sweep.cells[0]["stderr"]


def test_result_record_summary():
    rec = ResultRecord("clt", 3, "abc", {"k": 1})
    rec.checks.append(Check("a", True, "x", "y"))
    rec.sections["extra"] = {"v": np.float64(math.inf), "e": mc.Estimate(1.0, 0.1, 10).as_dict()}
    s = rec.summary(include_runtime=False)
    assert s["passed"] and s["extra"]["v"] == "inf" and "runtime" not in s
    rec.checks.append(Check("b", False, "x", "y"))
    assert not rec.passed
