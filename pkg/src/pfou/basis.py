"""Orthonormal 1-periodic bases and the deterministic drift functions built on them."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .fgn import check_hurst

__all__ = [
    "BasisSpec",
    "DriftParams",
    "gauss_legendre_panels",
    "period_integral",
    "evaluate_basis",
    "gram_check",
    "load_custom_basis",
    "HTilde",
    "h_of_t",
    "htilde_of_t",
]

ORTHO_TOL = 1e-8
GL_ORDER = 32
GL_PANELS = 16
CACHE_POINTS = 4096


def gauss_legendre_panels(a: float = 0.0, b: float = 1.0, panels: int = GL_PANELS,
                          order: int = GL_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of a composite Gauss-Legendre rule on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


_NODES, _WEIGHTS = gauss_legendre_panels()


def period_integral(values: np.ndarray) -> np.ndarray:
    """Integrate samples taken at the default period nodes (last axis)."""
    return values @ _WEIGHTS


@dataclass(frozen=True)
class BasisSpec:
    """``p`` functions on the unit period.

    ``kind='constant_plus_fourier'``: 1, sqrt2 cos(2 pi t), sqrt2 sin(2 pi t),
    sqrt2 cos(4 pi t), ...  ``kind='custom_table'``: ``table`` is a (p, K) array
    of values on the uniform grid k/K, k = 0..K-1, linearly interpolated.
    """

    p: int = 1
    kind: str = "constant_plus_fourier"
    table: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("basis needs at least one function")
        if self.kind == "custom_table":
            if self.table is None:
                raise ValueError("custom_table basis needs a table")
            tab = np.atleast_2d(np.asarray(self.table, dtype=float))
            if tab.shape[0] != self.p:
                raise ValueError(f"table has {tab.shape[0]} rows, p = {self.p}")
            if not np.all(np.isfinite(tab)):
                raise ValueError("table contains non-finite values")
            tab.setflags(write=False)
            object.__setattr__(self, "table", tab)
            gram = gram_check(self)
            if np.max(np.abs(gram - np.diag(np.diag(gram)))) > ORTHO_TOL:
                raise ValueError("custom basis functions are not orthogonal on [0, 1)")
        elif self.kind != "constant_plus_fourier":
            raise ValueError(f"unknown basis kind {self.kind!r}")

    @property
    def bound(self) -> float:
        if self.kind == "custom_table":
            return float(np.max(np.abs(self.table)))
        return 1.0 if self.p == 1 else float(np.sqrt(2.0))

    def values(self, t) -> np.ndarray:
        """All basis functions at times ``t``; shape (p,) + t.shape."""
        t = np.asarray(t, dtype=float)
        frac = np.mod(t, 1.0)
        if self.kind == "custom_table":
            K = self.table.shape[1]
            pos = frac * K
            k0 = np.floor(pos).astype(int) % K
            k1 = (k0 + 1) % K
            w = pos - np.floor(pos)
            return self.table[:, k0] * (1 - w) + self.table[:, k1] * w
        out = np.empty((self.p,) + t.shape)
        out[0] = 1.0
        for i in range(1, self.p):
            k = (i + 1) // 2
            arg = 2.0 * np.pi * k * frac
            out[i] = np.sqrt(2.0) * (np.cos(arg) if i % 2 == 1 else np.sin(arg))
        return out

    def period_means(self) -> np.ndarray:
        return period_integral(self.values(_NODES))


def evaluate_basis(spec: BasisSpec, i: int, t):
    """``phi_i(t)`` with 1-based index ``i``."""
    if not 1 <= i <= spec.p:
        raise IndexError(f"basis index {i} outside 1..{spec.p}")
    out = spec.values(np.asarray(t, dtype=float)[None])[i - 1]
    return out[0] if np.ndim(t) == 0 else out


def gram_check(spec: BasisSpec) -> np.ndarray:
    """Numerical Gram matrix over one period."""
    v = spec.values(_NODES)
    return (v * _WEIGHTS) @ v.T


def load_custom_basis(paths) -> BasisSpec:
    """Read one two-column (t, value) text table per basis function.

    Each table samples its function on a uniform grid covering [0, 1) and all
    tables must share that grid.
    """
    rows = []
    grid = None
    for path in paths:
        data = np.loadtxt(Path(path), ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns (t, value)")
        t = data[:, 0]
        K = t.size
        if not np.allclose(t, np.arange(K) / K, atol=1e-12):
            raise ValueError(f"{path}: times must be k/K for k = 0..K-1")
        if grid is not None and K != grid:
            raise ValueError(f"{path}: grid size {K} differs from {grid}")
        grid = K
        rows.append(data[:, 1])
    return BasisSpec(p=len(rows), kind="custom_table", table=np.array(rows))


@dataclass(frozen=True)
class DriftParams:
    mu: np.ndarray
    alpha: float
    H: float

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if mu.ndim != 1:
            raise ValueError("mu must be a vector")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "H", check_hurst(self.H))

    @property
    def p(self) -> int:
        return self.mu.size

    @property
    def theta(self) -> np.ndarray:
        return np.append(self.mu, self.alpha)


def _check(params: DriftParams, spec: BasisSpec):
    if params.p != spec.p:
        raise ValueError(f"mu has {params.p} entries but the basis has p = {spec.p}")


class HTilde:
    """Periodic stationary drift solution ``sum_i mu_i int_0^inf e^{-alpha u} phi_i(t-u) du``.

    Folding the half-line onto one period gives the factor 1/(1 - e^{-alpha}).
    ``__call__`` evaluates by quadrature; ``fast`` uses a periodic cubic
    spline through CACHE_POINTS exact values.
    """

    def __init__(self, params: DriftParams, spec: BasisSpec):
        _check(params, spec)
        self.params = params
        self.spec = spec
        self._kern = _WEIGHTS * np.exp(-params.alpha * _NODES) / -np.expm1(-params.alpha)
        grid = np.linspace(0.0, 1.0, CACHE_POINTS + 1)
        vals = self(grid[:-1])
        self._spline = CubicSpline(grid, np.append(vals, vals[0]), bc_type="periodic")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        out = np.empty(flat.size)
        chunk = 4096
        for start in range(0, flat.size, chunk):
            tt = flat[start:start + chunk]
            phi = self.spec.values(tt[:, None] - _NODES[None, :])
            out[start:start + chunk] = np.tensordot(self.params.mu, phi @ self._kern, axes=1)
        out = out.reshape(t.shape)
        return out if out.ndim else float(out)

    def fast(self, t):
        return self._spline(np.mod(np.asarray(t, dtype=float), 1.0))

    def h(self, t):
        """Drift solution started at zero: ``htilde(t) - e^{-alpha t} htilde(0)``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("h is defined for t >= 0")
        out = self(t) - np.exp(-self.params.alpha * t) * self(0.0)
        return out if np.ndim(out) else float(out)


def htilde_of_t(params: DriftParams, spec: BasisSpec, t):
    return HTilde(params, spec)(t)


def h_of_t(params: DriftParams, spec: BasisSpec, t):
    return HTilde(params, spec).h(t)
