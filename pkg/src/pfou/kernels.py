"""Singular-kernel quadrature and the second-kind covariance kernel.

The fBm isometry kernel ``H(2H-1)|u-v|^{2H-2}`` and the time-changed kernel
``r_H`` both blow up on the diagonal like ``|w|^{2H-2}``.  Every integral
against them is reduced to a one-dimensional integral in the separation
``w`` and evaluated with a panel rule whose first panel is Gauss-Jacobi for
the weight ``w^{2H-2}``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .basis import gauss_legendre_panels
from .fgn import check_hurst

__all__ = [
    "SingularPointError",
    "singular_rule",
    "quad_singular",
    "kernel_rH",
    "rH_regular_part",
    "lattice_truncation",
    "rH_lattice_sum",
    "lattice_quad",
    "y1_increment_autocovariance",
]

SING_PANELS = 64
SING_ORDER = 8
LATTICE_TOL = 1e-10


class SingularPointError(ValueError):
    """Kernel evaluated on its diagonal singularity."""


@lru_cache(maxsize=64)
def singular_rule(beta: float, panels: int = SING_PANELS, order: int = SING_ORDER):
    """Nodes and weights for ``int_0^1 w^beta F(w) dw`` with the weight folded in.

    Panel one is Gauss-Jacobi (exact for ``w^beta`` times a polynomial of
    degree ``2 order - 1``); the rest are Gauss-Legendre on ``w^beta F``.
    """
    x, w = roots_jacobi(order, 0.0, beta)
    h = 1.0 / panels
    # (1 + x)^beta on [-1, 1] -> w^beta on [0, h]
    nodes0 = 0.5 * h * (x + 1.0)
    weights0 = w * (0.5 * h) ** (beta + 1.0)
    gx, gw = np.polynomial.legendre.leggauss(order)
    left = np.arange(1, panels) * h
    nodes1 = (left[:, None] + 0.5 * h * (gx[None, :] + 1.0)).ravel()
    weights1 = (0.5 * h * np.broadcast_to(gw, (panels - 1, order))).ravel() * nodes1**beta
    nodes = np.concatenate([nodes0, nodes1])
    weights = np.concatenate([weights0, weights1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


_INNER_X, _INNER_W = gauss_legendre_panels(0.0, 1.0, panels=8, order=24)


def _lagged_overlap(f, g, w: np.ndarray) -> np.ndarray:
    """``int_0^{1-w} f(u) g(u + w) du`` for each separation ``w`` in [0, 1]."""
    span = 1.0 - w
    u = span[:, None] * _INNER_X[None, :]
    vals = f(u) * g(u + w[:, None])
    return span * (vals @ _INNER_W)


def quad_singular(f, g, H: float) -> float:
    """``H(2H-1) int_0^1 int_0^1 f(u) g(v) |v-u|^{2H-2} du dv``.

    ``f`` and ``g`` are vectorised callables bounded on [0, 1].
    """
    H = check_hurst(H)
    w, wt = singular_rule(2.0 * H - 2.0)
    total = _lagged_overlap(f, g, w) + _lagged_overlap(g, f, w)
    return float(H * (2.0 * H - 1.0) * (wt @ total))


def _rH_const(H: float) -> float:
    return H * (2.0 * H - 1.0) * H ** (2.0 * (H - 1.0))


def kernel_rH(H: float, w, z):
    """Covariance density of the time-changed noise at separation ``|w - z|``."""
    H = check_hurst(H)
    u = np.abs(np.asarray(w, dtype=float) - np.asarray(z, dtype=float))
    if np.any(u == 0):
        raise SingularPointError("r_H is singular at w = z")
    out = _rH_const(H) * np.exp(-(1.0 - H) * u / H) / (-np.expm1(-u / H)) ** (2.0 * (1.0 - H))
    return out if out.ndim else float(out)


def rH_regular_part(H: float, u) -> np.ndarray:
    """``r_H(u) / u^{2H-2}``, smooth on [0, inf) and equal to H(2H-1) at 0."""
    u = np.asarray(u, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(u > 0, u / -np.expm1(-u / H), H)
    return _rH_const(H) * np.exp(-(1.0 - H) * u / H) * ratio ** (2.0 - 2.0 * H)


def _r(H: float, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return _rH_const(H) * np.exp(-(1.0 - H) * u / H) / (-np.expm1(-u / H)) ** (2.0 * (1.0 - H))


def lattice_truncation(H: float, tol: float = LATTICE_TOL) -> int:
    """Smallest M with the two-sided tail bound over |m| > M below ``tol``.

    For separations u >= 1, r_H(u) <= K e^{-lam u} with
    K = r_H constant / (1 - e^{-1/H})^{2-2H} and lam = 1/H - 1, and every
    dropped term has separation >= M.
    """
    lam = 1.0 / H - 1.0
    K = _rH_const(H) / (-np.expm1(-1.0 / H)) ** (2.0 - 2.0 * H)
    M = 1
    while 2.0 * K * np.exp(-lam * M) / -np.expm1(-lam) >= tol:
        M += 1
    return M


def rH_lattice_sum(H: float, x, y, tol: float = LATTICE_TOL):
    """``sum_{m in Z} r_H(x, y + m)`` truncated at |m| <= M from the tail bound."""
    H = check_hurst(H)
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    frac = d - np.round(d)
    if np.any(np.abs(frac) == 0):
        raise SingularPointError("lattice sum is singular when x = y mod 1")
    M = lattice_truncation(H, tol)
    m = np.arange(-M, M + 1)
    out = _r(H, np.abs(d[..., None] - m)).sum(axis=-1)
    return out if out.ndim else float(out)


def _lattice_rest(H: float, d: np.ndarray, M: int) -> np.ndarray:
    """Smooth part of the lattice sum on (0, 1): every m except 0 and 1."""
    k = np.arange(1, M + 1)
    below = _r(H, d[:, None] + k[None, :]).sum(axis=1)       # m = -k
    above = _r(H, k[None, 1:] - d[:, None]).sum(axis=1)      # m = k >= 2
    return below + above


def lattice_quad(f, g, H: float, tol: float = LATTICE_TOL) -> tuple[float, int]:
    """``int_0^1 int_0^1 f(x) g(y) sum_m r_H(x, y + m) dx dy`` for 1-periodic f, g.

    By periodicity the double integral equals ``int_0^1 S(d) C(d) dd`` with
    ``C(d) = int_0^1 f(y + d) g(y) dy``.  The two singular lattice terms
    (m = 0 at d = 0, m = 1 at d = 1) use the Jacobi-weighted rule; the rest
    is smooth.  Returns the value and the truncation order.
    """
    H = check_hurst(H)
    M = lattice_truncation(H, tol)
    w, wt = singular_rule(2.0 * H - 2.0)

    def corr(d):
        y = _INNER_X
        return (f(np.mod(y[None, :] + d[:, None], 1.0)) * g(y)[None, :]) @ _INNER_W

    singular = wt @ (rH_regular_part(H, w) * (corr(w) + corr(1.0 - w)))
    dx, dw = gauss_legendre_panels(0.0, 1.0, panels=16, order=16)
    smooth = dw @ (_lattice_rest(H, dx, M) * corr(dx))
    return float(singular + smooth), M


def y1_increment_autocovariance(H: float, lags, step: float) -> np.ndarray:
    """Autocovariance of increments of the time-changed noise on a uniform grid.

    ``c(j) = int int r_H(w - z) dw dz`` over [jD, (j+1)D] x [0, D], i.e. the
    triangle-weighted integral ``int_{-D}^{D} (D - |s|) r_H(|jD + s|) ds``.
    """
    H = check_hurst(H)
    lags = np.abs(np.asarray(lags, dtype=int))
    D = float(step)
    beta = 2.0 * H - 2.0
    x, wt = singular_rule(beta, panels=8, order=16)
    scale = D ** (beta + 1.0)
    # int_0^D u^beta rho(u) q(u) du on the rescaled unit interval
    rho = rH_regular_part(H, D * x)
    c0 = 2.0 * scale * (wt @ (rho * D * (1.0 - x)))
    rise = scale * (wt @ (rho * D * x))  # int_0^D u r(u) du
    gx, gw = np.polynomial.legendre.leggauss(24)
    s = 0.5 * (gx + 1.0)  # nodes on [0, 1]
    gw = 0.5 * gw
    out = np.empty(lags.shape, dtype=float)
    flat = lags.ravel()
    res = np.empty(flat.size)
    res[flat == 0] = c0
    one = flat == 1
    if np.any(one):
        u = D * (1.0 + s)
        res[one] = rise + D * (gw @ (_r(H, u) * (D - D * s)))
    far = flat >= 2
    if np.any(far):
        j = flat[far].astype(float)[:, None]
        u_lo = D * (j - 1.0 + s[None, :])   # weight rises from 0 to D
        u_hi = D * (j + s[None, :])         # weight falls from D to 0
        res[far] = D * ((_r(H, u_lo) * (D * s)[None, :]) @ gw
                        + (_r(H, u_hi) * (D - D * s)[None, :]) @ gw)
    out[...] = res.reshape(lags.shape)
    return out
