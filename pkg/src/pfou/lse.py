"""Least squares estimation of (mu_1, ..., mu_p, alpha) from a gridded path.

The estimator is ``theta_hat = Q_n^{-1} P_n`` with

    P_n = (int phi_1 dX, ..., int phi_p dX, -int X delta X)
    Q_n = [[G_n, -a_n], [-a_n^T, b_n]].

The last entry of ``P_n`` is a divergence integral.  On a path it equals the
Young integral ``X_n^2 / 2`` minus a deterministic trace term that depends on
the noise law and on alpha, so it is not observable by itself.  ``correction``
selects how that term is supplied:

``"oracle"``
    trace at a given alpha (the true value in simulation studies);
``"plugin"``
    trace at the alpha solving the estimating equation itself;
``"none"``
    no trace, i.e. the plain pathwise estimator.  Its alpha component tends
    to zero rather than alpha.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.signal import lfilter

from .basis import BasisSpec
from .fgn import fgn_autocovariance
from .kernels import y1_increment_autocovariance
from .sde import FIRST_KIND, SECOND_KIND, SamplePath

__all__ = [
    "SingularDesignError",
    "DesignMatrices",
    "Estimate",
    "integrate_against_dx",
    "trapezoid",
    "assemble_design",
    "block_inverse",
    "noise_variance_profile",
    "trace_correction",
    "estimate",
    "estimate_batch",
]

GAMMA_MAX = 1e12
CROSS_CHECK_RTOL = 1e-8
CORRECTIONS = ("oracle", "plugin", "none")


class SingularDesignError(ArithmeticError):
    """Q_n is singular or gamma_n is undefined."""


def trapezoid(values: np.ndarray, step: float) -> np.ndarray:
    return step * (values.sum(axis=-1) - 0.5 * (values[..., 0] + values[..., -1]))


def integrate_against_dx(path: SamplePath, f) -> np.ndarray:
    """Left-point Riemann-Stieltjes sum of ``f`` against the path increments.

    ``f`` is a callable of t, or the string ``"x"`` for ``int X dX``, which
    uses the Young identity ``X_n^2 / 2`` (X_0 = 0).
    """
    if isinstance(f, str):
        if f != "x":
            raise ValueError("the only named integrand is 'x'")
        return 0.5 * path.x[..., -1] ** 2 - 0.5 * path.x[..., 0] ** 2
    fv = np.asarray(f(path.grid.points[:-1]), dtype=float)
    return np.diff(path.x, axis=-1) @ fv


@dataclass
class DesignMatrices:
    G: np.ndarray
    a: np.ndarray
    b: np.ndarray
    n: int

    @property
    def Lambda(self) -> np.ndarray:
        return self.a / self.n

    @property
    def gamma(self) -> np.ndarray:
        denom = self.b / self.n - np.sum(self.Lambda**2, axis=-1)
        with np.errstate(divide="ignore"):
            return 1.0 / denom

    def Q(self) -> np.ndarray:
        p = self.G.shape[0]
        lead = self.a.shape[:-1]
        Q = np.empty(lead + (p + 1, p + 1))
        Q[..., :p, :p] = self.G
        Q[..., :p, p] = -self.a
        Q[..., p, :p] = -self.a
        Q[..., p, p] = self.b
        return Q


def assemble_design(path: SamplePath, basis: BasisSpec) -> DesignMatrices:
    """Trapezoidal ``a_n``, ``b_n``; ``G_n = n I`` for the built-in orthonormal basis."""
    n = path.n
    t = path.grid.points
    phi = basis.values(t)
    a = trapezoid(path.x[..., None, :] * phi, path.step)
    b = trapezoid(path.x**2, path.step)
    if basis.kind == "constant_plus_fourier":
        G = n * np.eye(basis.p)
    else:
        G = trapezoid(phi[:, None, :] * phi[None, :, :], path.step)
        if np.max(np.abs(G - n * np.eye(basis.p))) > 1e-6 * n:
            raise SingularDesignError("custom basis Gram matrix is far from n I on this grid")
    if np.any(b == 0):
        raise SingularDesignError("degenerate path (identically zero): gamma undefined")
    return DesignMatrices(G, a, b, n)


def block_inverse(design: DesignMatrices) -> np.ndarray:
    """``Q_n^{-1}`` from Lambda_n and gamma_n, valid when G_n = n I.

    Schur complement on the ``n I`` block: the off-diagonal blocks are
    ``+gamma_n Lambda_n / n`` because Q_n itself carries ``-a_n``.
    """
    p = design.G.shape[0]
    lam = design.Lambda
    g = design.gamma
    lead = lam.shape[:-1]
    inv = np.empty(lead + (p + 1, p + 1))
    inv[..., :p, :p] = np.eye(p) + g[..., None, None] * lam[..., :, None] * lam[..., None, :]
    inv[..., :p, p] = g[..., None] * lam
    inv[..., p, :p] = g[..., None] * lam
    inv[..., p, p] = g
    return inv / design.n


@lru_cache(maxsize=32)
def _increment_acov(kind: str, H: float, count: int, step: float) -> np.ndarray:
    lags = np.arange(count)
    if kind == FIRST_KIND:
        c = fgn_autocovariance(H, lags, step)
    elif kind == SECOND_KIND:
        c = y1_increment_autocovariance(H, lags, step)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    c.setflags(write=False)
    return c


def noise_variance_profile(kind: str, H: float, alpha: float, count: int,
                           step: float) -> np.ndarray:
    """Variances V_k of the noise part of the Euler scheme, k = 0..count.

    With ``Z_{k+1} = beta Z_k + dW_k`` (beta = 1 - alpha step) and
    ``A_k = E[Z_k dW_k] = sum_{l=1}^k beta^{l-1} c(l)``:
    ``V_{k+1} = beta^2 V_k + 2 beta A_k + c(0)``.
    """
    c = _increment_acov(kind, float(H), int(count), float(step))
    beta = 1.0 - alpha * step
    with np.errstate(under="ignore"):
        pw = beta ** np.arange(max(count - 1, 0))
    A = np.concatenate([[0.0], np.cumsum(pw * c[1:])])
    drive = 2.0 * beta * A + c[0]
    V = lfilter([1.0], [1.0, -beta * beta], drive)
    return np.concatenate([[0.0], V])


def trace_correction(kind: str, H: float, alpha: float, n: int, m: int) -> float:
    """Mean of ``Z_n^2 / 2 + alpha int Z^2 dt`` for the noise part of the scheme.

    This is the expected Young integral ``int Z dW``: the deterministic gap
    between the pathwise and the divergence integral in the alpha row.
    """
    V = noise_variance_profile(kind, H, alpha, n * m, 1.0 / m)
    return float(0.5 * V[-1] + alpha * trapezoid(V, 1.0 / m))


def _p_vector(path: SamplePath, basis: BasisSpec, trace) -> np.ndarray:
    phi = basis.values(path.grid.points[:-1])
    dx = np.diff(path.x, axis=-1)
    head = dx @ phi.T
    young = integrate_against_dx(path, "x")
    return np.concatenate([head, (-(young - trace))[..., None]], axis=-1)


def _solve(design: DesignMatrices, P: np.ndarray, block_ok: bool) -> tuple[np.ndarray, np.ndarray]:
    g = design.gamma
    if np.any(~np.isfinite(g)) or np.any(g <= 0) or np.any(np.abs(g) > GAMMA_MAX):
        raise SingularDesignError(f"gamma_n = {g} is not a finite positive number")
    Q = design.Q()
    dense = np.linalg.solve(Q, P[..., None])[..., 0]
    if not block_ok:
        return dense, np.linalg.inv(Q)
    inv = block_inverse(design)
    theta = (inv @ P[..., None])[..., 0]
    scale = np.maximum(np.abs(dense), 1.0)
    if np.max(np.abs(theta - dense) / scale) > CROSS_CHECK_RTOL:
        raise SingularDesignError("block inverse and dense solve disagree; Q_n is ill conditioned")
    return theta, inv


@dataclass
class Estimate:
    theta_hat: np.ndarray
    design: DesignMatrices
    P: np.ndarray
    Q_inv: np.ndarray
    trace: float
    correction: str
    alpha_trace: float | None
    residual: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def to_json(self, extra: dict | None = None) -> str:
        d = self.design
        out = {
            "theta_hat": self.theta_hat.tolist(),
            "P": self.P.tolist(),
            "G": d.G.tolist(),
            "a": d.a.tolist(),
            "b": float(d.b),
            "Lambda": d.Lambda.tolist(),
            "gamma": float(d.gamma),
            "n": d.n,
            "m": self.meta.get("m"),
            "H": self.meta.get("H"),
            "kind": self.meta.get("kind"),
            "correction": self.correction,
            "alpha_trace": self.alpha_trace,
            "trace": self.trace,
        }
        if self.residual is not None:
            out["residual"] = self.residual.tolist()
        if extra:
            out.update(extra)
        return json.dumps(out, indent=2, sort_keys=True)


def _noise_free(path: SamplePath) -> bool:
    return path.meta.get("noise") == "zero"


def _plugin_alpha(path, basis, design, block_ok, kind, H) -> tuple[float, float]:
    def gap(alpha):
        tr = trace_correction(kind, H, alpha, path.n, path.m)
        theta, _ = _solve(design, _p_vector(path, basis, tr), block_ok)
        return theta[-1] - alpha

    lo = 1e-6
    if gap(lo) <= 0:
        raise SingularDesignError("estimating equation has no positive alpha root")
    hi = 1.0
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 1e6:
            raise SingularDesignError("could not bracket the plug-in alpha")
    root = brentq(gap, lo, hi, xtol=1e-12, rtol=1e-12)
    return root, trace_correction(kind, H, root, path.n, path.m)


def estimate(path: SamplePath, basis: BasisSpec, *, correction: str = "plugin",
             alpha: float | None = None, theta: np.ndarray | None = None) -> Estimate:
    """LSE for one path.

    ``alpha`` feeds the oracle trace (defaults to ``theta[-1]``).  Supplying
    the true ``theta`` also fills ``residual = P_n - Q_n theta``.
    """
    if path.x.ndim != 1:
        raise ValueError("estimate() takes a single path; use estimate_batch")
    if correction not in CORRECTIONS:
        raise ValueError(f"correction must be one of {CORRECTIONS}")
    design = assemble_design(path, basis)
    block_ok = basis.kind == "constant_plus_fourier"
    kind = path.meta.get("kind", FIRST_KIND)
    H = path.meta.get("H")
    alpha_trace = None
    if _noise_free(path):
        # no noise, nothing to correct
        correction = "none"
    if correction == "none":
        trace = 0.0
    elif correction == "oracle":
        alpha_trace = alpha if alpha is not None else (None if theta is None else float(theta[-1]))
        if alpha_trace is None:
            raise ValueError("oracle correction needs alpha or theta")
        trace = trace_correction(kind, H, alpha_trace, path.n, path.m)
    else:
        alpha_trace, trace = _plugin_alpha(path, basis, design, block_ok, kind, H)
    P = _p_vector(path, basis, trace)
    theta_hat, inv = _solve(design, P, block_ok)
    residual = None
    if theta is not None:
        residual = P - design.Q() @ np.asarray(theta, dtype=float)
    meta = {k: path.meta.get(k) for k in ("m", "H", "kind", "noise", "seed")}
    return Estimate(theta_hat, design, P, inv, float(trace), correction, alpha_trace,
                    residual, meta)


def estimate_batch(path: SamplePath, basis: BasisSpec, alpha_trace: float | None) -> np.ndarray:
    """theta_hat for every replication of a batched path (oracle or no trace)."""
    design = assemble_design(path, basis)
    block_ok = basis.kind == "constant_plus_fourier"
    if alpha_trace is None or _noise_free(path):
        trace = 0.0
    else:
        trace = trace_correction(path.meta["kind"], path.meta["H"], alpha_trace, path.n, path.m)
    theta, _ = _solve(design, _p_vector(path, basis, trace), block_ok)
    return theta
