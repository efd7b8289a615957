"""Monte Carlo plumbing shared by the simulators and estimators.

Reproducibility contract: every path owns a generator derived from
``(master_seed, stream, path_index)``.  Within a path, standard normals are
consumed step by step in fixed mode order.  Paths are processed in blocks
that may run on several threads; results are concatenated in path order,
so outputs do not depend on the thread count.  The noise each path sees
does not depend on the block size either, but batched transforms may
round differently, so bitwise equality is promised for a fixed block size.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

Z95 = 1.959963984540054

_config = {"threads": 1, "block_size": 1000}


def set_default_threads(n: int) -> None:
    if n < 1:
        raise ValueError("threads must be >= 1")
    _config["threads"] = int(n)


def default_threads() -> int:
    return _config["threads"]


def stream_id(*parts) -> int:
    """Stable 32-bit id for a tuple of labels (e.g. experiment name, step size)."""
    h = hashlib.blake2b(repr(parts).encode(), digest_size=4).digest()
    return int.from_bytes(h, "little")


def path_generator(master_seed: int, stream: int, path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(stream), int(path))))


class NoiseSource:
    """Standard normals for a block of paths, one independent stream per path.

    Draws are buffered ``chunk`` steps at a time; each path's sequence is
    the same whatever the chunk size.
    """

    def __init__(self, master_seed: int, stream: int, paths: range, width: int, n_steps: int,
                 max_buffer: int = 2**22):
        self.gens = [path_generator(master_seed, stream, p) for p in paths]
        self.width = width
        self.remaining = n_steps
        self.chunk = max(1, min(n_steps, max_buffer // max(1, len(self.gens) * width)))
        self._buf = None
        self._pos = 0

    def _refill(self):
        k = min(self.chunk, self.remaining)
        if k <= 0:
            raise RuntimeError("noise source exhausted")
        buf = np.empty((len(self.gens), k, self.width))
        for i, g in enumerate(self.gens):
            g.standard_normal(out=buf[i])
        self._buf = buf
        self._pos = 0
        self.remaining -= k

    def next(self) -> np.ndarray:
        if self._buf is None or self._pos >= self._buf.shape[1]:
            self._refill()
        z = self._buf[:, self._pos, :]
        self._pos += 1
        return z


def blocks(n_paths: int, block_size: int | None = None) -> list[range]:
    bs = block_size or _config["block_size"]
    return [range(s, min(s + bs, n_paths)) for s in range(0, n_paths, bs)]


def map_blocks(func, n_paths: int, threads: int | None = None, block_size: int | None = None):
    """Apply ``func(range)`` to fixed path blocks; results returned in block order."""
    parts = blocks(n_paths, block_size)
    threads = threads or _config["threads"]
    if threads <= 1 or len(parts) <= 1:
        return [func(r) for r in parts]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(func, parts))


def concat_results(results: list[dict]) -> dict:
    if not results:
        return {}
    return {k: np.concatenate([r[k] for r in results], axis=0) for k in results[0]}


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mean with a normal-theory 95% confidence interval."""

    value: float
    stderr: float
    n_paths: int

    @property
    def half_width(self) -> float:
        return Z95 * self.stderr

    @property
    def ci(self) -> tuple[float, float]:
        return (self.value - self.half_width, self.value + self.half_width)

    def as_dict(self) -> dict:
        lo, hi = self.ci
        return {"value": self.value, "stderr": self.stderr, "ci_low": lo, "ci_high": hi,
                "n_paths": self.n_paths}

    def __sub__(self, other: "Estimate") -> "Estimate":
        """Difference of independent estimates."""
        return Estimate(self.value - other.value, float(np.hypot(self.stderr, other.stderr)),
                        min(self.n_paths, other.n_paths))

    def __add__(self, other: "Estimate") -> "Estimate":
        return Estimate(self.value + other.value, float(np.hypot(self.stderr, other.stderr)),
                        min(self.n_paths, other.n_paths))

    def scaled(self, a: float) -> "Estimate":
        return Estimate(a * self.value, abs(a) * self.stderr, self.n_paths)


def mean_estimate(samples: np.ndarray, axis: int = 0) -> Estimate:
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    if n < 2:
        raise ValueError("need at least two samples for a confidence interval")
    mean = float(np.mean(samples, axis=axis))
    sd = float(np.std(samples, axis=axis, ddof=1))
    return Estimate(mean, float(sd / np.sqrt(n)), n)


def mean_estimates(samples: np.ndarray) -> list[Estimate]:
    """Column-wise estimates for ``samples`` of shape ``(n_paths, k)``."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    sd = samples.std(axis=0, ddof=1)
    return [Estimate(float(m), float(s / np.sqrt(n)), n) for m, s in zip(mean, sd)]
