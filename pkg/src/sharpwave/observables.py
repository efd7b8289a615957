"""Test functionals ``phi: H -> R`` with first and second derivatives.

All methods act on coefficient arrays of shape ``(..., n_modes)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral_core import SpectralField

__all__ = ["Observable", "BoundedCosine", "GaussianBump", "LinearFunctional"]


class Observable:
    bounded = True
    name = "observable"

    def value(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess(self, u: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """``D^2 phi(u) (a, b)``."""
        raise NotImplementedError

    def directional(self, u: np.ndarray, h: np.ndarray) -> np.ndarray:
        return np.sum(self.grad(u) * h, axis=-1)

    def __call__(self, u):
        if isinstance(u, SpectralField):
            u = u.coeffs
        return self.value(u)

    def describe(self) -> dict:
        return {"kind": self.name}


def _vec(g) -> np.ndarray:
    return np.asarray(g.coeffs if isinstance(g, SpectralField) else g, dtype=float)


@dataclass(frozen=True, eq=False)
class BoundedCosine(Observable):
    """``cos(omega <u, g> + phase)``; ``omega = 0`` gives the constant 1."""

    direction: object
    frequency: float = 1.0
    phase: float = 0.0
    name = "bounded_cosine"

    def __post_init__(self):
        object.__setattr__(self, "direction", _vec(self.direction))

    def _arg(self, u):
        return self.frequency * (u @ self.direction) + self.phase

    def value(self, u):
        return np.cos(self._arg(u))

    def grad(self, u):
        return (-self.frequency * np.sin(self._arg(u)))[..., None] * self.direction

    def directional(self, u, h):
        return -self.frequency * np.sin(self._arg(u)) * (h @ self.direction)

    def hess(self, u, a, b):
        return -self.frequency**2 * np.cos(self._arg(u)) * (a @ self.direction) * (b @ self.direction)

    def describe(self):
        return {"kind": self.name, "frequency": self.frequency, "phase": self.phase,
                "direction": self.direction.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianBump(Observable):
    """``exp(-|P_r (u - center)|^2 / (2 width^2))`` over the first ``rank`` modes."""

    rank: int
    width: float = 1.0
    center: object = None
    name = "gaussian_bump"

    def __post_init__(self):
        if self.rank < 1 or self.width <= 0:
            raise ValueError("rank must be >= 1 and width positive")
        if self.center is not None:
            object.__setattr__(self, "center", _vec(self.center))

    def _shifted(self, u):
        d = np.array(u[..., : self.rank], dtype=float)
        if self.center is not None:
            d -= self.center[: self.rank]
        return d

    def value(self, u):
        d = self._shifted(u)
        return np.exp(-np.sum(d * d, axis=-1) / (2 * self.width**2))

    def grad(self, u):
        d = self._shifted(u)
        v = self.value(u)
        out = np.zeros(np.shape(u))
        out[..., : self.rank] = -d / self.width**2 * v[..., None]
        return out

    def hess(self, u, a, b):
        d = self._shifted(u)
        v = self.value(u)
        w2 = self.width**2
        ar, br = a[..., : self.rank], b[..., : self.rank]
        return v * (np.sum(d * ar, -1) * np.sum(d * br, -1) / w2**2 - np.sum(ar * br, -1) / w2)

    def describe(self):
        return {"kind": self.name, "rank": self.rank, "width": self.width}


@dataclass(frozen=True, eq=False)
class LinearFunctional(Observable):
    """``<u, g>``; unbounded, so only meaningful in linear-case oracles."""

    direction: object
    bounded = False
    name = "linear_functional"

    def __post_init__(self):
        object.__setattr__(self, "direction", _vec(self.direction))

    def value(self, u):
        return u @ self.direction

    def grad(self, u):
        return np.broadcast_to(self.direction, np.shape(u)).copy()

    def directional(self, u, h):
        return h @ self.direction

    def hess(self, u, a, b):
        return np.zeros(np.shape(u)[:-1])

    def describe(self):
        return {"kind": self.name, "direction": self.direction.tolist()}
