"""Command-line entry point: ``sharpwave <command> [--config FILE] [--seed N] ...``.

The config file is flat YAML (``section.key: value``); see SCHEMA.md.
Outputs go to ``--out``: a CSV table (when the experiment has cells) and a
JSON summary.  The exit code is 0 iff no check failed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings

import numpy as np
import yaml

from . import montecarlo as mc
from .ergodic_stats import (
    HypothesisWarning,
    clt_experiment,
    ergodic_gap_curve,
    estimate_invariant_mean,
    estimate_poisson,
    poisson_gradient_variance,
)
from .harness import (
    Check,
    Experiment,
    ExperimentSpec,
    ResultRecord,
    _record,
    eps_scaling_study,
    weak_order_sweep,
)
from .integrators import RunConfig, Scheme, run, simulate, write_trajectory_binary, write_trajectory_csv
from .noise_model import CovarianceSpec, check_regularity
from .observables import BoundedCosine, GaussianBump, LinearFunctional
from .scalar_dynamics import OddPolynomial
from .selftest import MUTATIONS, selftest
from .sensitivity import estimate_dX, estimate_dX_bel, finite_difference_dX
from .spectral_core import SpectralField, build_domain, from_physical

PRESETS = {
    "smooth": {"decay_exponent": 1.0, "gamma": 0.99, "expected_slope": [0.7, 1.2]},
    "rough": {"decay_exponent": 0.0, "gamma": 0.49, "expected_slope": [0.10, 0.45]},
}

DEFAULTS = {
    "domain.dim": 1,
    "domain.bc": "dirichlet",
    "domain.modes": 64,
    "domain.lambda": 1.0,
    "domain.grid_factor": 2,
    "domain.backend": "auto",
    "noise.preset": "smooth",
    "noise.decay_exponent": None,
    "noise.cap": 1.0,
    "noise.gamma": None,
    "poly.a1": -1.0,
    "poly.a3": 1.0,
    "poly.epsilon": 1.0,
    "scheme.name": "splitting_convolution",
    "scheme.tau": 0.0625,
    "scheme.T": 1.0,
    "scheme.delta": None,
    "scheme.c3": 1.0,
    "scheme.initial_mode": 1,
    "scheme.initial_amplitude": 1.0,
    "experiment.taus": [0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625],
    "experiment.epsilons": [1.0, 0.5, 0.25, 0.125],
    "experiment.ratio": 64,
    "experiment.paths": 100_000,
    "experiment.min_paths": 256,
    "experiment.block_size": 1000,
    "experiment.observable": "bounded_cosine",
    "experiment.obs_mode": 1,
    "experiment.obs_frequency": 1.0,
    "experiment.obs_phase": None,
    "experiment.obs_width": 1.0,
    "experiment.expected_slope": None,
    "experiment.times": [0.0, 0.0625, 0.125, 0.1875, 0.25, 0.3125, 0.375, 0.4375, 0.5, 1.0, 2.0, 5.0, 10.0,
                         20.0],
    "experiment.gap_coupling": "independent",
    "experiment.clt_T": 100.0,
    "experiment.replicates": 1000,
    "experiment.ks_replicates": 200,
    "experiment.poisson_horizon": 2.0,
    "experiment.burn_in": 5.0,
    "experiment.outer": 200,
    "experiment.inner": 50,
    "experiment.snapshots": [],
    "experiment.binary": False,
    "experiment.sensitivity": True,
    "experiment.mutation": None,
}

# experiments whose default observable is odd (a sine); even observables see
# no gap between antipodal starts by symmetry
_ODD_DEFAULT = {Experiment.ERGODIC_GAP, Experiment.CLT}


class ConfigError(ValueError):
    pass


def load_config(path: str | None) -> dict:
    """Flat ``key: value`` YAML merged over :data:`DEFAULTS`; unknown keys raise :class:`ConfigError`."""
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of flat keys")
    for key, value in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key!r}")
        if isinstance(value, dict):
            raise ConfigError(f"config key {key!r} must hold a scalar or a list, not a mapping")
        cfg[key] = value
    return cfg


def _noise(cfg: dict):
    preset = cfg["noise.preset"]
    base = PRESETS.get(preset)
    if base is None and preset != "custom":
        raise ConfigError(f"noise.preset must be one of {sorted(PRESETS) + ['custom']}")
    s = cfg["noise.decay_exponent"] if cfg["noise.decay_exponent"] is not None else (base or {}).get("decay_exponent")
    if s is None:
        raise ConfigError("noise.decay_exponent is required with noise.preset: custom")
    gamma = cfg["noise.gamma"] if cfg["noise.gamma"] is not None else (base or {}).get("gamma", 0.99)
    return CovarianceSpec(float(s), float(cfg["noise.cap"]), float(gamma)), gamma, base


def build_run_config(cfg: dict, seed: int) -> RunConfig:
    dom = build_domain(int(cfg["domain.dim"]), cfg["domain.bc"], int(cfg["domain.modes"]),
                       float(cfg["domain.lambda"]), int(cfg["domain.grid_factor"]), cfg["domain.backend"])
    cov, _, _ = _noise(cfg)
    a1, a3 = float(cfg["poly.a1"]), float(cfg["poly.a3"])
    poly = OddPolynomial.linear(a1) if a3 == 0 else OddPolynomial.cubic(a3, a1)
    u0 = SpectralField.zeros(dom)
    amp = float(cfg["scheme.initial_amplitude"])
    if amp:
        u0 = SpectralField.unit(dom, int(cfg["scheme.initial_mode"]), amp)
    delta = cfg["scheme.delta"]
    return RunConfig(dom, cov, poly, float(cfg["poly.epsilon"]), float(cfg["scheme.tau"]), float(cfg["scheme.T"]),
                     scheme=Scheme(cfg["scheme.name"]), initial=u0, master_seed=int(seed),
                     delta=None if delta is None else float(delta), c3=float(cfg["scheme.c3"]))


def build_observable(cfg: dict, domain, experiment: Experiment):
    g = np.zeros(domain.n_modes)
    g[domain.mode_position(int(cfg["experiment.obs_mode"]))] = 1.0
    kind = cfg["experiment.observable"]
    if kind == "bounded_cosine":
        phase = cfg["experiment.obs_phase"]
        if phase is None:
            phase = -math.pi / 2 if experiment in _ODD_DEFAULT else 0.0
        return BoundedCosine(g, float(cfg["experiment.obs_frequency"]), float(phase))
    if kind == "gaussian_bump":
        return GaussianBump(int(cfg["experiment.obs_mode"]), float(cfg["experiment.obs_width"]))
    if kind == "linear_functional":
        return LinearFunctional(g)
    raise ConfigError(f"unknown observable {kind!r}")


def build_spec(cfg: dict, experiment: Experiment, seed: int, out_dir: str | None) -> ExperimentSpec:
    base = build_run_config(cfg, seed)
    _, gamma, preset = _noise(cfg)
    expected = cfg["experiment.expected_slope"]
    if expected is None and preset is not None:
        expected = preset["expected_slope"]
    params = {k.split(".", 1)[1]: v for k, v in cfg.items()
              if k.startswith("experiment.") and k not in (
                  "experiment.taus", "experiment.epsilons", "experiment.paths", "experiment.ratio",
                  "experiment.min_paths", "experiment.expected_slope", "experiment.block_size")}
    params["gamma"] = gamma
    return ExperimentSpec(
        experiment,
        base,
        taus=tuple(cfg["experiment.taus"]) if experiment is Experiment.WEAK_ORDER else (),
        epsilons=tuple(cfg["experiment.epsilons"]) if experiment is Experiment.EPS_SCALING else (),
        observables=(build_observable(cfg, base.domain, experiment),),
        n_paths=int(cfg["experiment.paths"]),
        ratio=int(cfg["experiment.ratio"]),
        min_paths=int(cfg["experiment.min_paths"]),
        expected_slope=None if expected is None else tuple(expected),
        out_dir=out_dir,
        preset=cfg["noise.preset"],
        params=params,
    )


# -- experiment runners ----------------------------------------------------------------

def run_simulate(spec: ExperimentSpec, threads, block_size) -> ResultRecord:
    t0 = time.perf_counter()
    cfg, p = spec.base, spec.params
    rec = _record(spec)
    traj = run(cfg, p["snapshots"] or None)
    if spec.out_dir:
        os.makedirs(spec.out_dir, exist_ok=True)
        write_trajectory_csv(traj, os.path.join(spec.out_dir, "trajectory.csv"))
        if p["binary"]:
            write_trajectory_binary(traj, os.path.join(spec.out_dir, "trajectory.bin"))
    final = simulate(cfg, spec.n_paths, threads=threads, block_size=block_size)["final"]
    phi = spec.observables[0]
    rec.sections["simulate"] = {
        "observable_mean": mc.mean_estimate(phi.value(final)).as_dict(),
        "l2_norm_squared": mc.mean_estimate(np.sum(final**2, axis=1)).as_dict(),
        "regularity": check_regularity(cfg.cov, cfg.domain).as_dict(),
    }
    rec.cells = [{"time": float(t), "mode": int(cfg.domain.mode_index[j][0]), "coefficient": float(c)}
                 for t, row in zip(traj.times, traj.states) for j, c in enumerate(row)] if cfg.domain.dim == 1 else []
    if p["sensitivity"] and spec.n_paths >= 100 and phi.bounded:
        h = np.zeros(cfg.domain.n_modes)
        h[0] = 1.0
        kw = dict(threads=threads, block_size=block_size)
        rec.sections["sensitivity"] = {
            "direction_mode": int(cfg.domain.mode_index[0][0]),
            "pathwise": estimate_dX(cfg, None, h, phi, spec.n_paths, **kw).as_dict(),
            "likelihood_ratio": estimate_dX_bel(cfg, None, h, phi, spec.n_paths, **kw).as_dict(),
            "finite_difference": finite_difference_dX(cfg, None, h, phi, spec.n_paths, **kw).as_dict(),
        }
    rec.runtime_seconds = time.perf_counter() - t0
    return rec


def run_ergodic_gap(spec: ExperimentSpec, threads, block_size) -> ResultRecord:
    t0 = time.perf_counter()
    cfg, p = spec.base, spec.params
    rec = _record(spec)
    ones = from_physical(np.ones(cfg.domain.grid_shape), cfg.domain).coeffs
    curve = ergodic_gap_curve(cfg, ones, -ones, spec.observables[0], p["times"], spec.n_paths,
                              coupling=p["gap_coupling"], threads=threads, block_size=block_size)
    rec.sections["ergodic"] = curve.as_dict()
    for t, dd in zip(curve.times, curve.differences):
        rec.cells.append({"time": float(t), "gap": abs(dd.value), "difference": dd.value, "stderr": dd.stderr,
                          "ci_low": dd.ci[0], "ci_high": dd.ci[1], "n_paths": dd.n_paths})
    last = curve.differences[-1]
    rec.checks.append(Check("gap_at_final_time", abs(last.value) < 2 * last.half_width,
                            "below 2x CI half-width", f"{abs(last.value):.3e} vs {2 * last.half_width:.3e}"))
    ok = curve.omega1 > 0 and curve.r_squared > 0.9
    rec.checks.append(Check("decay_fit", bool(ok), "omega1 > 0 and R^2 > 0.9",
                            f"omega1={curve.omega1:.4g}, R^2={curve.r_squared:.4g}"))
    rec.status = "ok" if rec.passed else "failed"
    rec.runtime_seconds = time.perf_counter() - t0
    return rec


def run_clt(spec: ExperimentSpec, threads, block_size) -> ResultRecord:
    t0 = time.perf_counter()
    cfg, p = spec.base, spec.params
    rec = _record(spec)
    phi = spec.observables[0]
    kw = dict(threads=threads, block_size=block_size)
    horizon = float(p["poisson_horizon"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", HypothesisWarning)
        if _symmetric(phi):
            mu = mc.Estimate(0.0, 0.0, 1)
        else:
            mu = estimate_invariant_mean(cfg, phi, float(p["burn_in"]), 4 * float(p["burn_in"]),
                                         int(p["outer"]) * int(p["inner"]), **kw)
        report = clt_experiment(cfg, phi, float(p["clt_T"]), int(p["replicates"]), mu=mu,
                                ks_replicates=int(p["ks_replicates"]), gamma=float(p["gamma"]), **kw)
        avar = poisson_gradient_variance(cfg, phi, horizon=horizon, burn_in=float(p["burn_in"]),
                                         n_outer=int(p["outer"]), n_inner=int(p["inner"]), **kw)
        report.asymptotic_variance = avar
        poisson = estimate_poisson(cfg, phi, None, [horizon / 2, horizon], max(100, int(p["outer"])), mu=mu,
                                   **kw)
    rec.warnings += [str(w.message) for w in caught if issubclass(w.category, HypothesisWarning)]
    rec.sections["clt"] = report.as_dict()
    rec.sections["poisson"] = {"gradient_variance": avar.as_dict(), "at_initial": poisson.as_dict()}
    rec.cells = [{"replicate": i, "z": float(z)} for i, z in enumerate(report.z)]
    rec.checks.append(Check("ks_normality", report.ks_pvalue > 0.01, "p > 0.01", f"{report.ks_pvalue:.4g}",
                            "ergodic_stats"))
    rel = abs(report.variance_ratio - 1.0)
    rec.checks.append(Check("variance_matches_quadrature", rel < 0.25, "quadrature within 25% of replicate variance",
                            f"{avar.value:.4g} vs {report.variance:.4g}", "ergodic_stats"))
    if cfg.poly.is_linear and isinstance(phi, LinearFunctional):
        B = cfg.domain.eigenvalues + cfg.poly.odd_coeffs[0] / cfg.epsilon
        q = cfg.cov.eigenvalues(cfg.domain)
        exact = float(np.sum(q * phi.direction**2 / B**2))
        rec.sections["clt"]["closed_form_variance"] = exact
        ok = abs(report.variance / exact - 1.0) < 0.1
        rec.checks.append(Check("linear_closed_form_variance", ok, f"within 10% of {exact:.6g}",
                                f"{report.variance:.6g}", "ergodic_stats"))
    rec.status = "ok" if rec.passed else "failed"
    rec.runtime_seconds = time.perf_counter() - t0
    return rec


def _symmetric(phi) -> bool:
    """Odd observable under odd dynamics: the invariant mean is exactly 0."""
    return isinstance(phi, LinearFunctional) or (
        isinstance(phi, BoundedCosine) and abs(abs(phi.phase) - math.pi / 2) < 1e-15)


def run_selftest(spec: ExperimentSpec, threads, block_size) -> ResultRecord:
    rec = _record(spec)
    checks, seconds = selftest(spec.base.master_seed, spec.params.get("mutation"))
    rec.checks = checks
    rec.cells = [c.as_dict() for c in checks]
    rec.status = "ok" if rec.passed else "failed"
    rec.runtime_seconds = seconds
    return rec


RUNNERS = {
    Experiment.SIMULATE: run_simulate,
    Experiment.WEAK_ORDER: lambda s, t, b: weak_order_sweep(s, threads=t, block_size=b),
    Experiment.EPS_SCALING: lambda s, t, b: eps_scaling_study(s, threads=t, block_size=b),
    Experiment.ERGODIC_GAP: run_ergodic_gap,
    Experiment.CLT: run_clt,
    Experiment.SELFTEST: run_selftest,
}

COMMANDS = {
    "simulate": Experiment.SIMULATE,
    "weak-order": Experiment.WEAK_ORDER,
    "eps-scaling": Experiment.EPS_SCALING,
    "ergodic-gap": Experiment.ERGODIC_GAP,
    "clt": Experiment.CLT,
    "selftest": Experiment.SELFTEST,
}


def run_experiment(command: str, cfg: dict, seed: int, out_dir: str | None, threads: int | None = None
                   ) -> ResultRecord:
    exp = COMMANDS[command]
    spec = build_spec(cfg, exp, seed, out_dir)
    rec = RUNNERS[exp](spec, threads, int(cfg["experiment.block_size"]))
    if out_dir:
        rec.write(out_dir, command.replace("-", "_"))
    return rec


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sharpwave", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="flat YAML config (see SCHEMA.md)")
    ap.add_argument("--seed", type=int, default=0, help="master seed (unsigned 64-bit)")
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--paths", type=int, help="override experiment.paths")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for path blocks")
    ap.add_argument("--mutate", choices=sorted(MUTATIONS), help="selftest only: inject a known fault")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.paths is not None:
        cfg["experiment.paths"] = args.paths
    if args.mutate:
        cfg["experiment.mutation"] = args.mutate
    mc.set_default_threads(args.threads)
    try:
        rec = run_experiment(args.command, cfg, args.seed, args.out, args.threads)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for c in rec.checks:
        if not c.passed:
            print(f"FAIL [{c.module}] {c.name}: expected {c.expected}, got {c.got}", file=sys.stderr)
    print(json.dumps({"experiment": rec.experiment, "status": rec.status, "passed": rec.passed,
                      "config_hash": rec.config_hash, "out": args.out}))
    return 0 if rec.passed else 1


if __name__ == "__main__":
    sys.exit(main())
