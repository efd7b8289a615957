"""Scalar maps applied pointwise on the physical grid.

* the odd polynomial nonlinearity ``f``
* the phase flow of ``dX = (-(1/eps) f(X) + lam X) dt`` and its increment
  quotient ``(flow_tau - id) / tau``
* the tamed drift ``(-(1/eps) f + lam id) / (1 + delta xi^(2m))`` and its
  first two derivatives

For a cubic ``f = a3 xi^3 + a1 xi`` the flow is a Bernoulli equation with
``c = lam - a1/eps`` and ``b = a3/eps``; writing ``E = exp(-2ct)`` and
``G = (1 - E)/c`` (``G = 2t`` when ``c = 0``) the solution is
``X = xi0 / sqrt(E + b xi0^2 G)``, which already covers ``xi0 = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import solve_ivp
from scipy.sparse import diags

__all__ = [
    "OddPolynomial",
    "FlowMethod",
    "FlowParams",
    "RegularizedDrift",
    "FlowIntegrationError",
    "psi0",
    "flow",
    "psi_tau",
    "theta_delta",
    "theta_prime",
    "theta_second",
    "check_taming_conditions",
    "TamingReport",
    "cubic_flow_bounds",
]


class FlowIntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OddPolynomial:
    """``f(xi) = sum_k a_{2k+1} xi^(2k+1)``.

    ``odd_coeffs`` lists ``(a_1, a_3, ..., a_{2m+1})``.  The leading
    coefficient must be positive; :meth:`linear` builds the degenerate
    ``f = a1 xi`` used by closed-form oracles, for which ``m = 0`` and the
    taming polynomial is the constant 1.
    """

    odd_coeffs: tuple

    def __post_init__(self):
        c = tuple(float(a) for a in self.odd_coeffs)
        if len(c) == 0:
            raise ValueError("need at least a_1")
        if len(c) > 1 and not c[-1] > 0:
            raise ValueError(f"leading coefficient a_{2 * len(c) - 1} must be positive, got {c[-1]}")
        object.__setattr__(self, "odd_coeffs", c)

    @classmethod
    def cubic(cls, a3: float = 1.0, a1: float = -1.0) -> "OddPolynomial":
        return cls((a1, a3))

    @classmethod
    def linear(cls, a1: float) -> "OddPolynomial":
        return cls((a1,))

    @property
    def m(self) -> int:
        return len(self.odd_coeffs) - 1

    @property
    def is_linear(self) -> bool:
        return self.m == 0

    @property
    def coefficients(self) -> np.ndarray:
        """Dense ascending coefficients ``a_0..a_{2m+1}`` (even ones zero)."""
        out = np.zeros(2 * self.m + 2)
        out[1::2] = self.odd_coeffs
        return out

    def __call__(self, xi):
        return P.polyval(xi, self.coefficients)

    def deriv(self, xi, order: int = 1):
        return P.polyval(xi, P.polyder(self.coefficients, order))

    def antideriv(self, xi):
        return P.polyval(xi, P.polyint(self.coefficients))

    @property
    def a1(self) -> float:
        return self.odd_coeffs[0]

    @property
    def a3(self) -> float:
        return self.odd_coeffs[1] if self.m >= 1 else 0.0


class FlowMethod(str, Enum):
    CLOSED_FORM_CUBIC = "closed_form_cubic"
    STIFF_ADAPTIVE = "stiff_adaptive"


@dataclass(frozen=True)
class FlowParams:
    epsilon: float
    lam: float
    poly: OddPolynomial
    method: FlowMethod = None
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    eps_lam_bounds: tuple | None = None

    def __post_init__(self):
        if self.epsilon <= 0 or self.lam < 0:
            raise ValueError("epsilon must be positive and lambda nonnegative")
        method = self.method
        if method is None:
            method = FlowMethod.CLOSED_FORM_CUBIC if self.poly.m <= 1 else FlowMethod.STIFF_ADAPTIVE
        method = FlowMethod(method)
        if method is FlowMethod.CLOSED_FORM_CUBIC and self.poly.m > 1:
            raise ValueError("closed-form flow needs f with only a1, a3")
        if self.eps_lam_bounds is not None:
            lo, hi = self.eps_lam_bounds
            if not lo <= self.epsilon * self.lam <= hi:
                raise ValueError(f"eps*lambda = {self.epsilon * self.lam} outside [{lo}, {hi}]")
        object.__setattr__(self, "method", method)

    @property
    def rate(self) -> float:
        """Linear rate ``c = lam - a1/eps``."""
        return self.lam - self.poly.a1 / self.epsilon

    @property
    def cubic_coeff(self) -> float:
        """``b = a3/eps``."""
        return self.poly.a3 / self.epsilon

    @property
    def timescale(self) -> float:
        return 1.0 / (1.0 / self.epsilon + self.lam)


def psi0(xi, params: FlowParams):
    """Drift of the scalar ODE: ``-(1/eps) f(xi) + lam xi``."""
    return -params.poly(xi) / params.epsilon + params.lam * np.asarray(xi, dtype=float)


_XI_CLIP = 1e150


class CubicFlow:
    """Closed-form cubic flow with the step-dependent constants cached.

    Inside time stepping the same ``t`` is used at every step, so ``E`` and
    ``b G`` are computed once.
    """

    def __init__(self, params: FlowParams, t: float):
        if t < 0:
            raise ValueError(f"flow time must be nonnegative, got {t}")
        c, b = params.rate, params.cubic_coeff
        self.t = t
        if c > 0:
            self.mode = "pos"
            self.E = np.exp(-2.0 * c * t)
            self.bG = b * (-np.expm1(-2.0 * c * t)) / c
        elif c < 0:
            # scaled form avoids overflow of exp(-2ct)
            self.mode = "neg"
            self.scale = np.exp(c * t)
            self.bH = b * np.expm1(2.0 * c * t) / c
        else:
            self.mode = "pos"
            self.E = 1.0
            self.bG = 2.0 * b * t

    def __call__(self, xi0):
        # beyond |xi0| = 1e150 the flow equals its limit to machine precision,
        # so clipping keeps xi0**2 finite without changing the result
        x = np.clip(np.asarray(xi0, dtype=float), -_XI_CLIP, _XI_CLIP)
        den = x * x
        if self.mode == "pos":
            return x / np.sqrt(den * self.bG + self.E)
        return x * self.scale / np.sqrt(den * self.bH + 1.0)

    def derivative(self, xi0):
        """``d flow / d xi0``, used by exact linearisations of the splitting map."""
        x = np.clip(np.asarray(xi0, dtype=float), -_XI_CLIP, _XI_CLIP)
        if self.mode == "pos":
            return self.E / (self.E + self.bG * x * x) ** 1.5
        return self.scale / (1.0 + self.bH * x * x) ** 1.5

    def derivative2(self, xi0):
        x = np.clip(np.asarray(xi0, dtype=float), -_XI_CLIP, _XI_CLIP)
        if self.mode == "pos":
            return -3.0 * self.E * self.bG * x / (self.E + self.bG * x * x) ** 2.5
        return -3.0 * self.scale * self.bH * x / (1.0 + self.bH * x * x) ** 2.5


def _stiff_flow(xi0: np.ndarray, t: float, params: FlowParams) -> np.ndarray:
    xi0 = np.asarray(xi0, dtype=float)
    flat = xi0.ravel()
    if t == 0 or flat.size == 0:
        return xi0.copy()
    dpoly = params.poly

    def rhs(_, y):
        return psi0(y, params)

    def jac(_, y):
        return diags(-dpoly.deriv(y) / params.epsilon + params.lam, format="csc")

    sol = solve_ivp(rhs, (0.0, t), flat, method="Radau", rtol=params.rel_tol, atol=params.abs_tol, jac=jac)
    if not sol.success:
        raise FlowIntegrationError(sol.message)
    return sol.y[:, -1].reshape(xi0.shape)


def flow(xi0, t: float, params: FlowParams):
    """Phase flow ``Phi_t`` of ``dX = -(1/eps) f(X) + lam X``."""
    if t < 0:
        raise ValueError(f"flow time must be nonnegative, got {t}")
    if params.method is FlowMethod.CLOSED_FORM_CUBIC:
        return CubicFlow(params, t)(xi0)
    return _stiff_flow(np.asarray(xi0, dtype=float), t, params)


def psi_tau(xi, tau: float, params: FlowParams):
    """``(Phi_tau(xi) - xi) / tau``; falls back to ``psi0`` for ``tau < 1e-12`` timescales."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if tau < 1e-12 * params.timescale:
        return psi0(xi, params)
    xi = np.asarray(xi, dtype=float)
    return (flow(xi, tau, params) - xi) / tau


@dataclass(frozen=True)
class RegularizedDrift:
    """``Theta(xi) = psi0(xi) / (1 + delta xi^(2m))``."""

    delta: float
    params: FlowParams
    _num: np.ndarray = field(init=False, repr=False)
    _den: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        p = self.params
        num = -p.poly.coefficients / p.epsilon
        num[1] += p.lam
        den = np.zeros(2 * p.poly.m + 1)
        den[0] = 1.0
        den[-1] += self.delta
        object.__setattr__(self, "_num", num)
        object.__setattr__(self, "_den", den)

    @property
    def F_exponent(self) -> int:
        return 2 * self.params.poly.m

    def F(self, xi):
        return np.asarray(xi, dtype=float) ** self.F_exponent

    def parts(self, xi, order: int = 2):
        """Values and derivatives of numerator and denominator up to ``order``."""
        xi = np.asarray(xi, dtype=float)
        num = [P.polyval(xi, self._num)]
        den = [P.polyval(xi, self._den)]
        for k in range(1, order + 1):
            num.append(P.polyval(xi, P.polyder(self._num, k)))
            den.append(P.polyval(xi, P.polyder(self._den, k)))
        return num, den


def theta_delta(xi, drift: RegularizedDrift):
    # psi0 over the taming denominator, so delta = 0 gives psi0 bitwise
    (d,) = drift.parts(xi, 0)[1]
    return psi0(xi, drift.params) / d


def theta_prime(xi, drift: RegularizedDrift):
    (n, n1), (d, d1) = drift.parts(xi, 1)
    return (n1 * d - n * d1) / (d * d)


def theta_second(xi, drift: RegularizedDrift):
    (n, n1, n2), (d, d1, d2) = drift.parts(xi, 2)
    return (n2 * d - n * d2) / (d * d) - 2.0 * d1 * (n1 * d - n * d1) / d**3


def theta_all(xi, drift: RegularizedDrift):
    """``(Theta, Theta', Theta'')`` in one polynomial pass."""
    (n, n1, n2), (d, d1, d2) = drift.parts(xi, 2)
    inv = 1.0 / d
    w = (n1 * d - n * d1) * inv * inv
    return psi0(xi, drift.params) / d, w, (n2 * d - n * d2) * inv * inv - 2.0 * d1 * w * inv


@dataclass
class TamingReport:
    L_estimate: float
    argmax: float
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def check_taming_conditions(poly: OddPolynomial, delta_grid, xi_grid, epsilon: float = 1.0,
                            lam: float = 1.0) -> TamingReport:
    """Grid checks of the structural conditions behind the tamed drift.

    ``L_estimate`` is the grid max of ``-f' F + F' f`` with ``F = xi^(2m)``.
    The second condition, ``-(1/eps) f' + lam delta F <= -(1/eps) g + lam delta F' xi``
    with ``g = f'``, is evaluated for every ``delta`` on ``delta_grid``.
    """
    xi = np.asarray(xi_grid, dtype=float)
    m = poly.m
    F = xi ** (2 * m)
    dF = 2 * m * xi ** (2 * m - 1) if m > 0 else np.zeros_like(xi)
    fv, df = poly(xi), poly.deriv(xi)
    expr = -df * F + dF * fv
    k = int(np.argmax(expr))
    violations = []
    g = df
    for delta in np.atleast_1d(delta_grid):
        lhs = -df / epsilon + lam * delta * F
        rhs = -g / epsilon + lam * delta * dF * xi
        bad = lhs > rhs + 1e-12 * (1.0 + np.abs(rhs))
        if np.any(bad):
            violations.append((float(delta), float(xi[np.argmax(bad)])))
    return TamingReport(float(expr[k]), float(xi[k]), violations)


def cubic_flow_bounds(params: FlowParams, t: float, b0: float | None = None):
    """Explicit bounds for the cubic flow at time ``t``.

    Returns ``(uniform, b0, K)`` where ``uniform`` is the initial-data-free
    bound ``(b G)^(-1/2)`` and ``(b0, K)`` give
    ``|flow(xi0, t)| <= exp(-b0 t / 2) |xi0| + K``.  The second bound comes
    from ``2c X^2 - 2b X^4 <= -b0 X^2 + (2c + b0)^2 / (8b)``.
    """
    c, b = params.rate, params.cubic_coeff
    if b <= 0:
        raise ValueError("bounds need a positive cubic coefficient")
    b0 = b if b0 is None else b0
    G = 2.0 * t if c == 0 else -np.expm1(-2.0 * c * t) / c
    uniform = (b * G) ** -0.5 if t > 0 else np.inf
    s = max(2.0 * c + b0, 0.0)
    K = np.sqrt(s * s / (8.0 * b) / b0)
    return uniform, b0, K
