"""Exact sampling of fractional Gaussian noise and fractional Brownian motion.

Uniform grids use circulant embedding of the increment autocovariance
(Davies-Harte); non-uniform grids use a Cholesky factor of the increment
covariance matrix.  Every sampler is a pure function of its arguments,
including the integer seed, which keys a counter-based Philox generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

__all__ = [
    "EmbeddingError",
    "CovarianceError",
    "TimeGrid",
    "NoiseIncrements",
    "CirculantSampler",
    "check_hurst",
    "make_rng",
    "replication_seed",
    "fbm_covariance",
    "fgn_autocovariance",
    "fgn_sampler",
    "sample_fgn_uniform",
    "fbm_increment_covariance",
    "sample_fbm_increments",
    "sample_fbm_nonuniform",
]

SEED_MASK = (1 << 64) - 1
EIG_RTOL = 1e-10
MAX_EMBEDDING = 1 << 25
CHOLESKY_CAP = 8192
CHOLESKY_JITTER = 1e-12


class EmbeddingError(RuntimeError):
    """Circulant embedding stayed indefinite up to the size cap."""


class CovarianceError(RuntimeError):
    """A covariance matrix was not numerically positive definite."""


def check_hurst(H: float) -> float:
    H = float(H)
    if not 0.5 < H < 1.0:
        raise ValueError(f"Hurst parameter must lie in (0.5, 1), got {H}")
    return H


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & SEED_MASK))


def replication_seed(base_seed: int, r: int) -> int:
    """Seed of replication ``r``: ``base_seed XOR r``."""
    return (int(base_seed) ^ int(r)) & SEED_MASK


@dataclass(frozen=True)
class TimeGrid:
    points: np.ndarray
    step: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise ValueError("time grid must be a non-empty 1-D array")
        if pts[0] < 0:
            raise ValueError("time grid must start at a non-negative time")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if self.step is not None:
            expect = pts[0] + self.step * np.arange(pts.size)
            scale = max(1.0, float(np.abs(pts).max()))
            if np.max(np.abs(pts - expect)) > 64 * np.finfo(float).eps * scale:
                raise ValueError("grid points are not uniformly spaced by step")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, count: int, step: float, start: float = 0.0) -> "TimeGrid":
        return cls(start + step * np.arange(count), step=float(step))

    def __len__(self) -> int:
        return self.points.size


@dataclass(frozen=True)
class NoiseIncrements:
    values: np.ndarray
    grid: TimeGrid
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape[-1] != len(self.grid) - 1:
            raise ValueError("need exactly one increment per grid interval")


def fbm_covariance(H: float, t, s):
    """Covariance ``E[B_t B_s] = (t^2H + s^2H - |t-s|^2H) / 2``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("fBm covariance is defined for non-negative times")
    h2 = 2.0 * H
    out = 0.5 * (t**h2 + s**h2 - np.abs(t - s) ** h2)
    return out if out.ndim else float(out)


def fgn_autocovariance(H: float, lag, step: float = 1.0):
    """Autocovariance of increments of fBm over a uniform grid of spacing ``step``."""
    k = np.abs(np.asarray(lag, dtype=float))
    if step <= 0:
        raise ValueError("step must be positive")
    h2 = 2.0 * H
    out = step**h2 * 0.5 * ((k + 1) ** h2 - 2 * k**h2 + np.abs(k - 1) ** h2)
    return out if out.ndim else float(out)


class CirculantSampler:
    """Draws stationary Gaussian sequences of fixed length.

    ``acov(lags)`` must return the autocovariance at the given integer lags.
    The embedding starts at the smallest power of two covering ``2 (count-1)``
    and doubles until every circulant eigenvalue is >= -EIG_RTOL * max.
    """

    def __init__(self, acov: Callable[[np.ndarray], np.ndarray], count: int,
                 max_size: int = MAX_EMBEDDING):
        if count < 1:
            raise ValueError("count must be >= 1")
        self.count = count
        size = 2
        while size < 2 * max(count - 1, 1):
            size *= 2
        while True:
            half = size // 2
            c = np.asarray(acov(np.arange(half + 1)), dtype=float)
            row = np.concatenate([c, c[-2:0:-1]])
            eig = np.fft.fft(row).real
            top = eig.max()
            if eig.min() >= -EIG_RTOL * top:
                break
            size *= 2
            if size > max_size:
                raise EmbeddingError(
                    f"circulant embedding of {count} points is not "
                    f"non-negative definite up to size {max_size}; "
                    "use a Cholesky sampler instead")
        self.size = size
        self.clamped = int(np.count_nonzero(eig < 0))
        sqrt_eig = np.sqrt(np.clip(eig, 0.0, None) / size)
        sqrt_eig.setflags(write=False)
        self._sqrt_eig = sqrt_eig

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = (self.size,) if size is None else (size, self.size)
        z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return np.fft.fft(self._sqrt_eig * z, axis=-1).real[..., : self.count]


@lru_cache(maxsize=64)
def fgn_sampler(H: float, count: int, step: float) -> CirculantSampler:
    H = check_hurst(H)
    return CirculantSampler(lambda k: fgn_autocovariance(H, k, step), count)


def sample_fgn_uniform(H: float, count: int, step: float, seed: int,
                       size: int | None = None) -> NoiseIncrements:
    """``count`` increments of fBm on a uniform grid of spacing ``step``.

    With ``size`` set, returns ``size`` independent rows in one call.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    sampler = fgn_sampler(check_hurst(H), int(count), float(step))
    values = sampler.sample(make_rng(seed), size)
    grid = TimeGrid.uniform(count + 1, step)
    return NoiseIncrements(values, grid, seed,
                           {"method": "circulant", "embedding": sampler.size})


def _pair_second_difference(H: float, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Cov of increments over [a_i, b_i] and [c_j, d_j] for non-overlapping intervals.

    ``left`` holds (a, b) columns of the earlier intervals, ``right`` (c, d) of
    the later ones, with b <= c.  The second difference of x^2H is formed in
    relative terms around the gap so that far-apart short intervals do not
    cancel catastrophically.
    """
    h2 = 2.0 * H
    a, b = left
    c, d = right
    l1 = b - a
    l2 = d - c
    gap = c - b
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / gap

        def q(x):
            return np.expm1(h2 * np.log1p(x * inv))

        far = 0.5 * gap**h2 * (q(l1 + l2) - q(l1) - q(l2))
    near = 0.5 * ((l1 + l2) ** h2 - l1**h2 - l2**h2)
    return np.where(gap > 0, far, near)


def fbm_increment_covariance(H: float, points) -> np.ndarray:
    """Covariance matrix of consecutive fBm increments between ``points``."""
    t = np.asarray(points, dtype=float)
    a, b = t[:-1], t[1:]
    n = a.size
    cov = np.empty((n, n))
    i, j = np.triu_indices(n, k=1)
    cov[i, j] = _pair_second_difference(H, (a[i], b[i]), (a[j], b[j]))
    cov[j, i] = cov[i, j]
    cov[np.arange(n), np.arange(n)] = (b - a) ** (2.0 * H)
    return cov


def _cholesky(cov: np.ndarray) -> tuple[np.ndarray, float]:
    try:
        return np.linalg.cholesky(cov), 0.0
    except np.linalg.LinAlgError:
        jitter = CHOLESKY_JITTER * float(np.max(np.diag(cov)))
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0])), jitter
        except np.linalg.LinAlgError as exc:
            w = np.linalg.eigvalsh(cov)
            raise CovarianceError(
                f"increment covariance not positive definite after jitter "
                f"{jitter:.3g}: min eigenvalue {w[0]:.3g}, max {w[-1]:.3g}, "
                f"size {cov.shape[0]}") from exc


@lru_cache(maxsize=8)
def _weighted_factor(H: float, points: tuple, weights: tuple | None):
    cov = fbm_increment_covariance(H, np.array(points))
    if weights is not None:
        w = np.array(weights)
        cov = cov * np.outer(w, w)
    factor, jitter = _cholesky(cov)
    factor.setflags(write=False)
    return factor, jitter


def sample_fbm_increments(H: float, points, seed: int, weights=None,
                          size: int | None = None,
                          cap: int = CHOLESKY_CAP) -> np.ndarray:
    """Exact sample of ``w_k (B_{t_{k+1}} - B_{t_k})`` by Cholesky.

    ``weights`` (one per interval) multiply the increments before the
    factorisation, which keeps time-changed grids well conditioned.
    """
    H = check_hurst(H)
    t = np.asarray(points, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0) or (t.size and t[0] < 0):
        raise ValueError("points must be non-negative and strictly increasing")
    n = t.size - 1
    if n > cap:
        raise ValueError(f"{n} increments exceed the Cholesky size cap {cap}")
    if n == 0:
        return np.zeros((0,) if size is None else (size, 0))
    w = None if weights is None else tuple(np.asarray(weights, dtype=float))
    factor, _ = _weighted_factor(H, tuple(t), w)
    rng = make_rng(seed)
    z = rng.standard_normal((n,) if size is None else (size, n))
    return z @ factor.T


def sample_fbm_nonuniform(H: float, grid, seed: int, cap: int = CHOLESKY_CAP) -> np.ndarray:
    """Values of fBm at the grid points, with ``B_0 = 0``."""
    pts = grid.points if isinstance(grid, TimeGrid) else TimeGrid(np.asarray(grid, float)).points
    full = pts if pts[0] == 0.0 else np.concatenate([[0.0], pts])
    incr = sample_fbm_increments(H, full, seed, cap=cap)
    path = np.concatenate([[0.0], np.cumsum(incr)])
    return path if pts[0] == 0.0 else path[1:]
