"""Reference computations that share no code with the package."""

import numpy as np
from scipy import integrate
from scipy.special import beta as beta_fn


def fbm_cov(H, t, s):
    return 0.5 * (abs(t) ** (2 * H) + abs(s) ** (2 * H) - abs(t - s) ** (2 * H))


def fgn_acov_from_fbm(H, k, step=1.0):
    """Cov(B_{step} - B_0, B_{(k+1)step} - B_{k step}) from the fBm covariance."""
    a, b, c, d = 0.0, step, k * step, (k + 1) * step
    return fbm_cov(H, b, d) - fbm_cov(H, b, c) - fbm_cov(H, a, d) + fbm_cov(H, a, c)


def bartlett_se(rho, N, k):
    """Standard error of (1/(N-k)) sum X_i X_{i+k} for a zero-mean Gaussian sequence.

    ``rho`` is a callable autocovariance on integer lags.
    """
    L = N - k
    d = np.arange(-(L - 1), L)
    w = L - np.abs(d)
    terms = rho(d) ** 2 + rho(d + k) * rho(d - k)
    return np.sqrt(np.sum(w * terms)) / L


def r_kernel(H, u):
    u = np.asarray(u, dtype=float)
    c = H * (2 * H - 1) * H ** (2 * H - 2)
    return c * np.exp(-(1 - H) * u / H) / (1 - np.exp(-u / H)) ** (2 - 2 * H)


def _r_reg(H, u):
    """r_H(u) u^{2-2H}, finite at u = 0."""
    c = H * (2 * H - 1) * H ** (2 * H - 2)
    ratio = H if u == 0 else u / (1 - np.exp(-u / H))
    return c * np.exp(-(1 - H) * u / H) * ratio ** (2 - 2 * H)


def r_full_integral(H):
    """int_R r_H(|u|) du, the constant-function entry of the periodic covariance."""
    head, _ = integrate.quad(lambda u: _r_reg(H, u), 0, 1,
                             weight="alg", wvar=(2 * H - 2, 0))
    tail, _ = integrate.quad(lambda u: r_kernel(H, u), 1, np.inf, limit=200)
    return 2 * (head + tail)


def r_full_integral_closed(H):
    return 2 * H ** (2 * H) * (2 * H - 1) * beta_fn(1 - H, 2 * H - 1)


def zbar_var_laplace(H, alpha):
    """(1/alpha) int_0^inf e^{-alpha u} r_H(u) du by adaptive quadrature."""
    head, _ = integrate.quad(lambda u: np.exp(-alpha * u) * _r_reg(H, u),
                             0, 1, weight="alg", wvar=(2 * H - 2, 0))
    tail, _ = integrate.quad(lambda u: np.exp(-alpha * u) * r_kernel(H, u), 1, np.inf, limit=200)
    return (head + tail) / alpha


def lattice_bruteforce(H, x, y, M=200):
    m = np.arange(-M, M + 1)
    return float(np.sum(r_kernel(H, np.abs(x - y - m))))


def singular_mc(f, g, H, n, rng):
    """MC estimate (value, standard error) of H(2H-1) int int f(u) g(v)|v-u|^{2H-2}.

    Samples the separation w = v - u from the density proportional to
    |w|^{2H-2} on (-1, 1) and u uniformly on the admissible interval, which
    keeps the estimator variance finite.
    """
    b = 2 * H - 1
    absw = rng.random(n) ** (1 / b)      # density b |w|^{b-1} on (0, 1)
    w = np.where(rng.random(n) < 0.5, absw, -absw)
    lo = np.maximum(0.0, -w)
    span = 1 - np.abs(w)
    u = lo + span * rng.random(n)
    v = u + w
    # integrand / density = H(2H-1)|w|^{b-1} f g span / (b |w|^{b-1} / 2)
    vals = H * (2 * H - 1) * f(u) * g(v) * span * 2 / b
    return vals.mean(), vals.std(ddof=1) / np.sqrt(n)


def lattice_entry_mc(H, n, rng, M=60):
    """MC estimate (value, standard error) of int int sum_m r_H(x - y - m) dx dy.

    x is uniform; y = x - d mod 1 with d drawn from an equal mixture of the
    densities b d^{b-1} and b (1-d)^{b-1} (b = 2H - 1), which tames the two
    diagonal singularities at d = 0 and d = 1.
    """
    b = 2 * H - 1
    x = rng.random(n)
    e = rng.random(n) ** (1 / b)
    d = np.where(rng.random(n) < 0.5, e, 1 - e)
    y = np.mod(x - d, 1.0)
    m = np.arange(-M, M + 1)
    s = r_kernel(H, np.abs((x - y)[:, None] - m[None, :])).sum(axis=1)
    q = 0.5 * b * d ** (b - 1) + 0.5 * b * (1 - d) ** (b - 1)
    vals = s / q
    return vals.mean(), vals.std(ddof=1) / np.sqrt(n)


def euler_noise_free(mu, alpha, m, n):
    """Euler skeleton of dx = (mu - alpha x) dt for constant mu, from x_0 = 0."""
    step = 1.0 / m
    x = np.zeros(n * m + 1)
    for k in range(n * m):
        x[k + 1] = x[k] + (mu - alpha * x[k]) * step
    return x
