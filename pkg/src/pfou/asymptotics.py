"""Limiting matrices of the least squares estimators.

First kind: ``n Q_n^{-1} -> M`` and ``n^{1-H}(theta_hat - theta) -> N(0, M^T Sigma M)``
for 1/2 < H < 3/4.  Second kind: ``n Q_n^{-1} -> M_bar`` and
``sqrt(n)(theta_tilde - theta) -> N(0, M_bar^T Sigma_bar M_bar)``.

The variance ``sigma2`` inside ``Sigma_bar`` has no closed form and is
estimated by simulation (:func:`estimate_sigma2_mc`).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import gamma as gamma_fn

from .basis import BasisSpec, DriftParams, HTilde, _NODES, period_integral
from .fgn import check_hurst, replication_seed
from .kernels import LATTICE_TOL, lattice_quad, lattice_truncation, quad_singular
from .sde import FIRST_KIND, SECOND_KIND, ModelSpec, simulate_second_kind

__all__ = [
    "AsymptoticCov",
    "LimitConstants",
    "Sigma2Estimate",
    "ergodic_variance_first",
    "zbar_variance",
    "limit_constants",
    "matrix_M",
    "matrix_M_bar",
    "matrix_Sigma",
    "matrix_Sigma_bar",
    "estimate_sigma2_mc",
    "sigma2_stabilization",
    "asymptotic_covariance",
]

QUAD_TOL = 1e-8
PSD_TOL = 1e-8
SIGMA_FORMS = ("stated", "limit")


def ergodic_variance_first(H: float, alpha: float) -> float:
    """Stationary variance ``alpha^{-2H} H Gamma(2H)`` of the fOU of the first kind."""
    H = check_hurst(H)
    return float(alpha ** (-2.0 * H) * H * gamma_fn(2.0 * H))


def zbar_variance(H: float, alpha: float) -> float:
    """Stationary variance of the second-kind OU part.

    ``(2H-1) H^{2H} / alpha * B((alpha-1)H + 1, 2H-1)``, the Laplace transform
    ``alpha^{-1} int_0^inf e^{-alpha u} r_H(u) du`` in closed form.
    """
    H = check_hurst(H)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return float((2.0 * H - 1.0) * H ** (2.0 * H) / alpha
                 * beta_fn((alpha - 1.0) * H + 1.0, 2.0 * H - 1.0))


@dataclass(frozen=True)
class LimitConstants:
    """``Lambda_i = int phi_i htilde``, ``int htilde^2``, the stationary variance,
    and ``scale`` (gamma for the first kind, eta for the second)."""

    Lambda: np.ndarray
    htilde_sq: float
    stationary_var: float
    scale: float


def limit_constants(params: DriftParams, spec: BasisSpec, kind: str = FIRST_KIND) -> LimitConstants:
    ht = HTilde(params, spec)
    hv = ht(_NODES)
    Lambda = period_integral(spec.values(_NODES) * hv)
    h2 = float(period_integral(hv * hv))
    if kind == FIRST_KIND:
        var = ergodic_variance_first(params.H, params.alpha)
    elif kind == SECOND_KIND:
        var = zbar_variance(params.H, params.alpha)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    lam2 = float(np.sum(Lambda**2))
    # Bessel: sum Lambda_i^2 <= int htilde^2 for an orthonormal family
    if lam2 > h2 * (1.0 + 1e-10) + 1e-12:
        raise ArithmeticError(f"Bessel inequality violated: {lam2} > {h2}")
    denom = h2 + var - lam2
    if not denom > 0:
        raise ArithmeticError(f"limit scale denominator {denom} is not positive")
    return LimitConstants(Lambda, h2, var, 1.0 / denom)


def _block(Lambda: np.ndarray, scale: float) -> np.ndarray:
    p = Lambda.size
    M = np.empty((p + 1, p + 1))
    M[:p, :p] = np.eye(p) + scale * np.outer(Lambda, Lambda)
    M[:p, p] = scale * Lambda
    M[p, :p] = scale * Lambda
    M[p, p] = scale
    return M


def matrix_M(params: DriftParams, spec: BasisSpec) -> np.ndarray:
    """Almost sure limit of ``n Q_n^{-1}`` for the first kind."""
    c = limit_constants(params, spec, FIRST_KIND)
    return _block(c.Lambda, c.scale)


def matrix_M_bar(params: DriftParams, spec: BasisSpec) -> np.ndarray:
    """Almost sure limit of ``n Q_n^{-1}`` for the second kind."""
    c = limit_constants(params, spec, SECOND_KIND)
    return _block(c.Lambda, c.scale)


def _assemble_sigma(G: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    p = a.size
    S = np.empty((p + 1, p + 1))
    S[:p, :p] = G
    S[:p, p] = -a
    S[p, :p] = -a
    S[p, p] = b
    return S


def _basis_fn(spec: BasisSpec, i: int):
    return lambda t: spec.values(t)[i]


def matrix_Sigma(params: DriftParams, spec: BasisSpec, form: str = "stated") -> np.ndarray:
    """Covariance of the first-kind noise vector.

    ``G_ij = (int phi_i)(int phi_j)``.  With ``form='stated'`` the entries
    ``a_i`` and ``b`` carry the kernel ``H(2H-1)|v-u|^{2H-2}``; with
    ``form='limit'`` every entry is a product of period means, which is the
    covariance limit of the normalised noise integrals.  The two agree when
    ``htilde`` is constant and every basis function other than the first
    has zero mean.
    """
    if form not in SIGMA_FORMS:
        raise ValueError(f"form must be one of {SIGMA_FORMS}")
    H = params.H
    if H >= 0.75:
        warnings.warn(f"H = {H} >= 3/4 lies outside the first-kind CLT regime", stacklevel=2)
    means = spec.period_means()
    G = np.outer(means, means)
    ht = HTilde(params, spec)
    if not np.any(params.mu):
        return _assemble_sigma(G, np.zeros(spec.p), 0.0)
    if form == "limit":
        hbar = float(period_integral(ht(_NODES)))
        return _assemble_sigma(G, means * hbar, hbar * hbar)
    a = np.array([quad_singular(_basis_fn(spec, i), ht.fast, H) for i in range(spec.p)])
    b = quad_singular(ht.fast, ht.fast, H)
    return _assemble_sigma(G, a, b)


def matrix_Sigma_bar(params: DriftParams, spec: BasisSpec, sigma2: float,
                     tol: float = LATTICE_TOL) -> tuple[np.ndarray, int]:
    """Covariance of the second-kind noise vector and the lattice truncation order.

    Entries are ``int int f(x) g(y) sum_m r_H(x, y + m) dx dy``; ``sigma2``
    is added to the last diagonal entry.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    H = params.H
    p = spec.p
    ht = HTilde(params, spec)
    fns = [_basis_fn(spec, i) for i in range(p)]
    G = np.empty((p, p))
    M = lattice_truncation(H, tol)
    for i in range(p):
        for j in range(i, p):
            G[i, j] = G[j, i] = lattice_quad(fns[i], fns[j], H, tol)[0]
    if np.any(params.mu):
        a = np.array([lattice_quad(f, ht.fast, H, tol)[0] for f in fns])
        b = lattice_quad(ht.fast, ht.fast, H, tol)[0]
    else:
        a, b = np.zeros(p), 0.0
    return _assemble_sigma(G, a, b + sigma2), M


@dataclass(frozen=True)
class Sigma2Estimate:
    value: float
    se: float
    n: int
    m: int
    replications: int
    seed: int

    def as_dict(self) -> dict:
        return {"sigma2": self.value, "sigma2_se": self.se, "n": self.n, "m": self.m,
                "replications": self.replications, "seed": self.seed}


def _jackknife_variance(x: np.ndarray) -> tuple[float, float]:
    """Sample variance of ``x`` and its leave-one-out jackknife standard error."""
    R = x.size
    s1 = x.sum()
    s2 = (x * x).sum()
    loo_mean = (s1 - x) / (R - 1)
    loo_var = ((s2 - x * x) - (R - 1) * loo_mean**2) / (R - 2)
    var = float(np.var(x, ddof=1))
    se = float(np.sqrt((R - 1) / R * np.sum((loo_var - loo_var.mean()) ** 2)))
    return var, se


def estimate_sigma2_mc(H: float, alpha: float, replications: int = 500, n: int = 400,
                       m: int = 50, seed: int = 0) -> Sigma2Estimate:
    """Variance of ``n^{-1/2} int_0^n Z dY`` over simulated mean-zero second-kind paths.

    The pathwise integral is a left-point sum.  It differs from the divergence
    integral by a deterministic amount, so both have the same variance.
    Replication ``r`` uses seed ``seed XOR r``.
    """
    H = check_hurst(H)
    if replications < 100:
        raise ValueError("estimate_sigma2_mc needs at least 100 replications")
    model = ModelSpec(DriftParams(np.zeros(1), alpha, H), BasisSpec(1), SECOND_KIND)
    stats = np.empty(replications)
    for r in range(replications):
        path = simulate_second_kind(model, n, m, replication_seed(seed, r))
        stats[r] = path.x[:-1] @ path.noise / np.sqrt(n)
    var, se = _jackknife_variance(stats)
    return Sigma2Estimate(var, se, n, m, replications, int(seed))


def sigma2_stabilization(H: float, alpha: float, replications: int = 500, n: int = 400,
                         m: int = 50, seed: int = 0) -> dict:
    """Estimates at ``n`` and ``2n`` (disjoint seed streams) and whether they agree
    within 3 joint standard errors."""
    first = estimate_sigma2_mc(H, alpha, replications, n, m, seed)
    second = estimate_sigma2_mc(H, alpha, replications, 2 * n, m, seed ^ (1 << 32))
    joint = float(np.hypot(first.se, second.se))
    gap = abs(first.value - second.value)
    return {"at_n": first.as_dict(), "at_2n": second.as_dict(), "gap": gap,
            "threshold": 3.0 * joint, "passed": bool(gap <= 3.0 * joint)}


def _is_psd(S: np.ndarray, tol: float = PSD_TOL) -> bool:
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    return bool(w[0] >= -tol * max(1.0, abs(w[-1])))


@dataclass
class AsymptoticCov:
    M: np.ndarray
    Sigma: np.ndarray
    product: np.ndarray
    kind: str
    quad_tol: float
    truncation_order: int | None = None
    sigma2: float | None = None
    sigma2_se: float | None = None
    constants: LimitConstants | None = None
    sigma_form: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def sigma_psd(self) -> bool:
        return _is_psd(self.Sigma)

    def sigma2_sensitivity(self) -> np.ndarray:
        """d product / d sigma2: the outer product of the last row of M."""
        row = self.M[-1]
        return np.outer(row, row) if self.kind == SECOND_KIND else np.zeros_like(self.M)

    def as_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "M": self.M.tolist(),
            "Sigma": self.Sigma.tolist(),
            "product": self.product.tolist(),
            "quad_tol": self.quad_tol,
            "truncation_order": self.truncation_order,
            "sigma2": self.sigma2,
            "sigma2_se": self.sigma2_se,
            "sigma_psd": self.sigma_psd,
        }
        if self.sigma_form is not None:
            out["sigma_form"] = self.sigma_form
        if self.constants is not None:
            key = "gamma" if self.kind == FIRST_KIND else "eta"
            out[key] = self.constants.scale
            out["Lambda"] = self.constants.Lambda.tolist()
            out["htilde_sq"] = self.constants.htilde_sq
            out["stationary_var"] = self.constants.stationary_var
        out.update(self.meta)
        return out

    def to_json(self, extra: dict | None = None) -> str:
        d = self.as_dict()
        if extra:
            d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)


def asymptotic_covariance(model: ModelSpec, *, sigma2: Sigma2Estimate | float | None = None,
                          sigma_form: str = "stated", tol: float = LATTICE_TOL) -> AsymptoticCov:
    """Assemble ``M``, ``Sigma`` and ``M^T Sigma M`` for a model.

    Second kind needs ``sigma2`` (a number or a :class:`Sigma2Estimate`).
    """
    params, spec = model.drift, model.basis
    if model.kind == FIRST_KIND:
        c = limit_constants(params, spec, FIRST_KIND)
        M = _block(c.Lambda, c.scale)
        S = matrix_Sigma(params, spec, sigma_form)
        out = AsymptoticCov(M, S, M.T @ S @ M, FIRST_KIND, QUAD_TOL, constants=c,
                            sigma_form=sigma_form)
    else:
        if sigma2 is None:
            raise ValueError("second kind needs a sigma2 value or estimate")
        meta = {}
        if isinstance(sigma2, Sigma2Estimate):
            s2, se = sigma2.value, sigma2.se
            meta["sigma2_mc"] = sigma2.as_dict()
        else:
            s2, se = float(sigma2), None
        c = limit_constants(params, spec, SECOND_KIND)
        M = _block(c.Lambda, c.scale)
        S, order = matrix_Sigma_bar(params, spec, s2, tol)
        out = AsymptoticCov(M, S, M.T @ S @ M, SECOND_KIND, tol, order, s2, se, c, meta=meta)
    out.product = 0.5 * (out.product + out.product.T)
    if not out.sigma_psd:
        warnings.warn("Sigma is not positive semidefinite for this basis and drift",
                      stacklevel=2)
    return out
