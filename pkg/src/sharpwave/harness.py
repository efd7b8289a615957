"""Experiment orchestration: weak-order sweeps, epsilon scaling and result records.

Weak errors ``e(tau) = E phi(u_tau) - E phi(u_{tau/r})`` are estimated by the
telescoping sum over dyadic levels

    e(tau) = sum_{l=0}^{L-1} E[phi(u_{tau 2^-l}) - phi(u_{tau 2^-l-1})],  r = 2^L,

each level from coupled (common Brownian path) coarse/fine pairs.  Levels
are shared between sweep cells, and deeper levels use fewer paths since
their differences have smaller variance.  Each level has its own RNG
stream keyed by ``(epsilon, level step)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import stats

from . import montecarlo as mc
from .integrators import RunConfig, simulate_coupled

__all__ = [
    "Experiment",
    "ExperimentSpec",
    "ResultRecord",
    "Check",
    "config_hash",
    "level_paths",
    "weak_error_cells",
    "fit_slope",
    "weak_order_sweep",
    "eps_scaling_study",
    "co_scaled_config",
]


class Experiment(str, Enum):
    WEAK_ORDER = "weak_order"
    EPS_SCALING = "eps_scaling"
    ERGODIC_GAP = "ergodic_gap"
    CLT = "clt"
    SELFTEST = "selftest"
    SIMULATE = "simulate"


def _is_sorted(xs) -> bool:
    return all(a <= b for a, b in zip(xs, xs[1:])) or all(a >= b for a, b in zip(xs, xs[1:]))


@dataclass(frozen=True)
class ExperimentSpec:
    """What to run.  ``params`` carries experiment-specific knobs (plain JSON values)."""

    experiment: Experiment
    base: RunConfig
    taus: tuple = ()
    epsilons: tuple = ()
    observables: tuple = ()
    n_paths: int = 100_000
    ratio: int = 64
    min_paths: int = 256
    expected_slope: tuple | None = None
    out_dir: str | None = None
    preset: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "experiment", Experiment(self.experiment))
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if self.experiment is Experiment.WEAK_ORDER and not self.taus:
            raise ValueError("weak-order sweep needs a nonempty tau list")
        if self.experiment is Experiment.EPS_SCALING and len(self.epsilons) < 3:
            raise ValueError("epsilon scaling needs at least three epsilon values")
        for name, xs in (("taus", self.taus), ("epsilons", self.epsilons)):
            if not _is_sorted(xs):
                raise ValueError(f"{name} must be sorted")
            if any(x <= 0 for x in xs):
                raise ValueError(f"{name} must be positive")
        if self.experiment in (Experiment.WEAK_ORDER, Experiment.EPS_SCALING):
            r = self.ratio
            if r < 64 or r & (r - 1):
                raise ValueError("reference ratio must be a power of two >= 64")
        if self.n_paths < 2 or self.min_paths < 2:
            raise ValueError("need at least two paths")

    def step_flags(self) -> list[dict]:
        """(tau, eps) cells violating ``tau (lam + 1/eps) <= c3``."""
        flags = []
        eps_list = self.epsilons or (self.base.epsilon,)
        for eps in eps_list:
            lam = self.base.lam if not self.epsilons else self.base.epsilon * self.base.lam / eps
            taus = self.taus or (self.base.tau,)
            for tau in taus:
                r = tau * (lam + 1.0 / eps)
                if r > self.base.c3:
                    flags.append({"tau": tau, "epsilon": eps, "step_ratio": r, "c3": self.base.c3})
        return flags

    def describe(self) -> dict:
        return {
            "experiment": self.experiment.value,
            "preset": self.preset,
            "base": self.base.describe(),
            "taus": list(self.taus),
            "epsilons": list(self.epsilons),
            "observables": [o.describe() for o in self.observables],
            "n_paths": self.n_paths,
            "ratio": self.ratio,
            "min_paths": self.min_paths,
            "expected_slope": None if self.expected_slope is None else list(self.expected_slope),
            "params": self.params,
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Enum):
        return x.value
    return x


def config_hash(description: dict) -> str:
    """SHA-1 of the canonical JSON form of a description (git-style hex)."""
    blob = json.dumps(_jsonable(description), sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(blob.encode()).hexdigest()


@dataclass
class Check:
    name: str
    passed: bool
    expected: str
    got: str
    module: str = "harness"

    def as_dict(self) -> dict:
        return {"name": self.name, "module": self.module, "passed": bool(self.passed),
                "expected": self.expected, "got": self.got}


@dataclass
class ResultRecord:
    """Everything an experiment produced, traceable to ``(seed, config_hash)``."""

    experiment: str
    seed: int
    config_hash: str
    config: dict
    cells: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    sections: dict = field(default_factory=dict)
    status: str = "ok"
    runtime_seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self, include_runtime: bool = True) -> dict:
        out = {
            "experiment": self.experiment,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "status": self.status,
            "passed": self.passed,
            "config": self.config,
            "cells": self.cells,
            "fits": self.fits,
            "checks": [c.as_dict() for c in self.checks],
            "warnings": self.warnings,
        }
        out.update(self.sections)
        if include_runtime:
            out["runtime"] = {"seconds": self.runtime_seconds}
        return _jsonable(out)

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(self.summary(include_runtime), indent=2, sort_keys=True)

    def write(self, out_dir: str, stem: str | None = None) -> dict:
        """Write ``<stem>.csv`` (one row per cell) and ``<stem>.json``; returns the paths."""
        os.makedirs(out_dir, exist_ok=True)
        stem = stem or self.experiment
        paths = {"json": os.path.join(out_dir, f"{stem}.json")}
        with open(paths["json"], "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")
        if self.cells:
            paths["csv"] = os.path.join(out_dir, f"{stem}.csv")
            cols = list(self.cells[0].keys())
            with open(paths["csv"], "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=cols)
                w.writeheader()
                for row in self.cells:
                    w.writerow({k: _jsonable(row.get(k)) for k in cols})
        return paths


# -- weak errors --------------------------------------------------------------------

def level_paths(level_tau: float, top_tau: float, n_paths: int, min_paths: int) -> int:
    """``max(min_paths, n_paths * level_tau / top_tau)``: paths halve per dyadic level."""
    return max(int(min_paths), int(round(n_paths * level_tau / top_tau)))


def _level_key(tau: float) -> float:
    return float(np.float64(tau))


def weak_error_cells(config: RunConfig, taus, observables, *, ratio: int, n_paths: int,
                     min_paths: int, top_tau: float | None = None, threads=None,
                     block_size=None) -> tuple[list, dict]:
    """Weak-error estimates for each tau and observable.

    Returns ``(cells, levels)``: ``cells[i][k]`` is the :class:`Estimate`
    of ``e(taus[i])`` for observable ``k``; ``levels`` maps each level step
    to its per-observable difference estimates.
    """
    L = int(round(math.log2(ratio)))
    top = max(taus) if top_tau is None else top_tau
    level_taus = sorted({_level_key(t * 2.0**-l) for t in taus for l in range(L)}, reverse=True)
    levels = {}
    for lt in level_taus:
        m = level_paths(lt, top, n_paths, min_paths)
        cfg = config.with_(tau=lt, c3=math.inf)
        stream = mc.stream_id("level", float(config.epsilon), lt)
        res = simulate_coupled(cfg, m, lt, 2, stream=stream, threads=threads, block_size=block_size)
        levels[lt] = [mc.mean_estimate(o.value(res["coarse_final"]) - o.value(res["fine_final"]))
                      for o in observables]
    cells = []
    for t in taus:
        per_obs = []
        for k in range(len(observables)):
            parts = [levels[_level_key(t * 2.0**-l)][k] for l in range(L)]
            value = math.fsum(p.value for p in parts)
            se = math.sqrt(math.fsum(p.stderr**2 for p in parts))
            per_obs.append(mc.Estimate(value, se, parts[0].n_paths))
        cells.append(per_obs)
    return cells, levels


def fit_slope(x, y) -> dict:
    """OLS of ``log y`` on ``log x``; slope with its standard error."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    if len(lx) < 2:
        return {"slope": math.nan, "slope_stderr": math.nan, "intercept": math.nan, "r_squared": math.nan,
                "n_cells": len(lx)}
    if len(lx) == 2:
        slope = (ly[1] - ly[0]) / (lx[1] - lx[0])
        return {"slope": float(slope), "slope_stderr": math.nan, "intercept": float(ly[0] - slope * lx[0]),
                "r_squared": 1.0, "n_cells": 2}
    fit = stats.linregress(lx, ly)
    return {"slope": float(fit.slope), "slope_stderr": float(fit.stderr), "intercept": float(fit.intercept),
            "r_squared": float(fit.rvalue**2), "n_cells": len(lx)}


def _gated(taus, estimates, factor: float = 3.0):
    """Cells whose |e| exceeds ``factor`` CI half-widths."""
    keep = [(t, abs(e.value)) for t, e in zip(taus, estimates) if abs(e.value) > factor * e.half_width]
    return [t for t, _ in keep], [v for _, v in keep]


def weak_order_sweep(spec: ExperimentSpec, *, threads=None, block_size=None) -> ResultRecord:
    t0 = time.perf_counter()
    cfg = spec.base
    taus = sorted(spec.taus, reverse=True)
    obs = list(spec.observables)
    if not obs:
        raise ValueError("weak-order sweep needs at least one observable")
    cells, levels = weak_error_cells(cfg, taus, obs, ratio=spec.ratio, n_paths=spec.n_paths,
                                     min_paths=spec.min_paths, threads=threads, block_size=block_size)
    rec = _record(spec)
    rec.warnings += [f"step bound violated: {f}" for f in spec.step_flags()]
    for t, per_obs in zip(taus, cells):
        for k, e in enumerate(per_obs):
            rec.cells.append(_cell_row(t, cfg.epsilon, k, e, spec, cfg))
            if abs(e.value) <= 3 * e.half_width:
                rec.warnings.append(f"tau={t} observable {k}: CI swamps the weak error (excluded from fit)")
    for k in range(len(obs)):
        gt, gv = _gated(taus, [c[k] for c in cells])
        fit = fit_slope(gt, gv)
        fit["status"] = "ok" if len(gt) >= 2 else "inconclusive"
        fit["taus_used"] = gt
        rec.fits[f"observable_{k}"] = fit
    rec.sections["levels"] = [
        {"level_tau": lt, **{f"observable_{k}": e.as_dict() for k, e in enumerate(v)}}
        for lt, v in sorted(levels.items(), reverse=True)
    ]
    primary = rec.fits["observable_0"]
    if primary["status"] == "inconclusive":
        rec.status = "inconclusive"
        rec.checks.append(Check("weak_order_slope", False, "at least two identifiable cells",
                                f"{primary['n_cells']} cells above 3x CI"))
    elif spec.expected_slope is not None:
        lo, hi = spec.expected_slope
        ok = lo <= primary["slope"] <= hi
        rec.checks.append(Check("weak_order_slope", ok, f"slope in [{lo}, {hi}]",
                                f"{primary['slope']:.4f} +- {primary['slope_stderr']:.4f}"))
        rec.status = "ok" if ok else "failed"
    rec.runtime_seconds = time.perf_counter() - t0
    return rec


def _cell_row(tau, eps, k, e: mc.Estimate, spec, cfg) -> dict:
    return {
        "tau": tau,
        "epsilon": eps,
        "observable": k,
        "weak_error": abs(e.value),
        "signed_error": e.value,
        "stderr": e.stderr,
        "ci_low": e.ci[0],
        "ci_high": e.ci[1],
        "n_paths": e.n_paths,
        "reference_tau": tau / spec.ratio,
        "step_ratio": tau * (cfg.lam + 1.0 / eps),
        "identifiable": abs(e.value) > 3 * e.half_width,
    }


def _record(spec: ExperimentSpec) -> ResultRecord:
    desc = spec.describe()
    return ResultRecord(spec.experiment.value, spec.base.master_seed, config_hash(desc), _jsonable(desc))


# -- epsilon scaling ----------------------------------------------------------------

def co_scaled_config(base: RunConfig, eps: float) -> RunConfig:
    """Keep ``eps * lam`` and ``tau (lam + 1/eps)`` at their base values."""
    if eps == base.epsilon:
        return base
    lam = base.epsilon * base.lam / eps
    rate = base.tau * (base.lam + 1.0 / base.epsilon)
    tau = rate / (lam + 1.0 / eps)
    # snap to the nearest step that divides T
    n = max(1, int(round(base.T / tau)))
    return base.with_(domain=base.domain.with_lambda(lam), epsilon=eps, tau=base.T / n,
                      initial=None if base.initial is None else
                      type(base.initial)(base.initial.coeffs, base.domain.with_lambda(lam)))


def eps_scaling_study(spec: ExperimentSpec, *, threads=None, block_size=None) -> ResultRecord:
    """Weak error against ``1/eps`` under the co-scaled step rule.

    Polynomial growth is supported when regressing ``log e`` on
    ``log(1/eps)`` leaves a smaller residual than regressing on ``1/eps``.
    """
    t0 = time.perf_counter()
    obs = list(spec.observables)
    if not obs:
        raise ValueError("epsilon scaling needs at least one observable")
    rec = _record(spec)
    rec.warnings += [f"step bound violated: {f}" for f in spec.step_flags()]
    eps_list = sorted(spec.epsilons, reverse=True)
    errors = []
    for eps in eps_list:
        cfg = co_scaled_config(spec.base, eps)
        cells, _ = weak_error_cells(cfg, [cfg.tau], obs, ratio=spec.ratio, n_paths=spec.n_paths,
                                    min_paths=spec.min_paths, threads=threads, block_size=block_size)
        e = cells[0][0]
        errors.append(e)
        for k, ek in enumerate(cells[0]):
            row = _cell_row(cfg.tau, eps, k, ek, spec, cfg)
            row["lambda"] = cfg.lam
            rec.cells.append(row)
    keep = [(eps, abs(e.value)) for eps, e in zip(eps_list, errors) if abs(e.value) > 3 * e.half_width]
    if len(keep) < 3:
        rec.status = "inconclusive"
        rec.checks.append(Check("eps_scaling_fit", False, "at least three identifiable cells",
                                f"{len(keep)} cells above 3x CI"))
    else:
        inv = np.array([1.0 / e for e, _ in keep])
        ly = np.log([v for _, v in keep])
        poly = stats.linregress(np.log(inv), ly)
        expo = stats.linregress(inv, ly)
        rss_poly = float(np.sum((ly - poly.intercept - poly.slope * np.log(inv)) ** 2))
        rss_exp = float(np.sum((ly - expo.intercept - expo.slope * inv) ** 2))
        rec.fits["polynomial"] = {"exponent": float(poly.slope), "exponent_stderr": float(poly.stderr),
                                  "r_squared": float(poly.rvalue**2), "rss": rss_poly}
        rec.fits["exponential"] = {"rate": float(expo.slope), "rate_stderr": float(expo.stderr),
                                   "r_squared": float(expo.rvalue**2), "rss": rss_exp}
        rec.fits["epsilons_used"] = [e for e, _ in keep]
        ok_model = rss_poly <= rss_exp
        ok_exp = poly.slope < 6
        rec.checks.append(Check("polynomial_beats_exponential", ok_model, "rss_poly <= rss_exp",
                                f"{rss_poly:.4g} vs {rss_exp:.4g}"))
        rec.checks.append(Check("fitted_exponent", ok_exp, "exponent < 6", f"{poly.slope:.4f}"))
        rec.status = "ok" if ok_model and ok_exp else "failed"
    rec.runtime_seconds = time.perf_counter() - t0
    return rec
