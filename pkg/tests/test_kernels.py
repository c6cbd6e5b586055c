import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from pfou.kernels import (SingularPointError, kernel_rH, lattice_quad, lattice_truncation,
                          quad_singular, rH_lattice_sum, rH_regular_part, singular_rule,
                          y1_increment_autocovariance)

import oracles

one = lambda t: np.ones_like(t)
cos1 = lambda t: np.sqrt(2) * np.cos(2 * np.pi * t)


class TestSingularRule:
    @pytest.mark.parametrize("beta", [-0.8, -0.5, -0.1])
    def test_integrates_weight(self, beta):
        x, w = singular_rule(beta)
        assert w.sum() == pytest.approx(1 / (beta + 1), rel=1e-13)

    def test_polynomial_moment(self):
        x, w = singular_rule(-0.4)
        assert w @ x**3 == pytest.approx(1 / 3.6, rel=1e-12)


class TestQuadSingular:
    @pytest.mark.parametrize("H", [0.55, 0.6, 0.7, 0.75, 0.85, 0.9])
    def test_unit_square_identity(self, H):
        assert abs(quad_singular(one, one, H) - 1.0) < 1e-8

    def test_against_importance_sampling(self):
        rng = np.random.default_rng(2024)
        est, se = oracles.singular_mc(one, cos1, 0.6, 10**6, rng)
        assert abs(quad_singular(one, cos1, 0.6) - est) < 3 * se

    def test_not_zero_for_cosine(self):
        # the kernel on [0,1]^2 is not translation invariant
        assert abs(quad_singular(one, cos1, 0.7)) > 1e-3

    @settings(max_examples=15, deadline=None)
    @given(H=st.floats(0.55, 0.95), a=st.floats(-2, 2), b=st.floats(-2, 2))
    def test_bilinear_symmetric(self, H, a, b):
        f = lambda t: a + np.sin(3 * t)
        g = lambda t: b * t**2
        assert quad_singular(f, g, H) == pytest.approx(quad_singular(g, f, H), abs=1e-12)

    def test_against_adaptive_quadrature(self):
        H = 0.7
        f = lambda t: np.exp(t)
        g = lambda t: 1 + t
        # reduce to the separation variable and integrate with an algebraic weight
        def inner(w):
            u = np.linspace(0, 1 - w, 2001)
            return integrate.simpson(f(u) * g(u + w) + g(u) * f(u + w), x=u)
        ref, _ = integrate.quad(inner, 0, 1, weight="alg", wvar=(2 * H - 2, 0))
        assert quad_singular(f, g, H) == pytest.approx(H * (2 * H - 1) * ref, rel=1e-6)


class TestKernelRH:
    def test_diagonal_asymptotic(self):
        H, d = 0.7, 1e-6
        ratio = kernel_rH(H, d, 0.0) / (H * (2 * H - 1) * d ** (2 * H - 2))
        assert abs(ratio - 1) < 1e-4

    def test_symmetric(self):
        assert kernel_rH(0.7, 1.3, 0.2) == kernel_rH(0.7, 0.2, 1.3)

    def test_singular(self):
        with pytest.raises(SingularPointError):
            kernel_rH(0.7, 0.4, 0.4)

    def test_decay_rate(self):
        H, x, y = 0.75, 0.1, 0.4
        vals = [np.log(kernel_rH(H, m + y, x)) + (1 / H - 1) * (m + y - x) for m in (10, 20, 40)]
        assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0]) + 1e-15
        assert abs(vals[2] - vals[1]) < 1e-6

    def test_regular_part_at_zero(self):
        assert rH_regular_part(0.8, 0.0) == pytest.approx(0.8 * 0.6)

    def test_matches_oracle(self):
        u = np.array([0.01, 0.5, 3.0])
        np.testing.assert_allclose(kernel_rH(0.65, u, 0.0), oracles.r_kernel(0.65, u), rtol=1e-12)


class TestLatticeSum:
    def test_against_bruteforce(self):
        v = rH_lattice_sum(0.75, 0.2, 0.7, 1e-10)
        assert v == pytest.approx(oracles.lattice_bruteforce(0.75, 0.2, 0.7), abs=1e-10)

    def test_tail_bound(self):
        H = 0.75
        M = lattice_truncation(H, 1e-10)
        m = np.arange(-(M + 5), M + 6)
        longer = np.sum(oracles.r_kernel(H, np.abs(0.2 - 0.7 - m)))
        assert abs(longer - rH_lattice_sum(H, 0.2, 0.7, 1e-10)) < 1e-10

    @given(s=st.floats(0.0, 0.19))
    def test_translation(self, s):
        assert rH_lattice_sum(0.7, 0.3, 0.1, 1e-10) == pytest.approx(
            rH_lattice_sum(0.7, 0.3 + s, 0.1 + s, 1e-10), rel=1e-12)

    def test_same_point_mod_one(self):
        with pytest.raises(SingularPointError):
            rH_lattice_sum(0.7, 0.25, 1.25)

    @pytest.mark.parametrize("H", [0.6, 0.75, 0.9])
    def test_cauchy_geometric(self, H):
        m = np.arange(1, 40)
        terms = oracles.r_kernel(H, m + 0.3)
        ratio = terms[1:] / terms[:-1]
        assert np.all(ratio < np.exp(-(1 / H - 1)) * 1.05)


class TestLatticeQuad:
    @pytest.mark.parametrize("H", [0.6, 0.75, 0.9])
    def test_constant_entry_closed_form(self, H):
        val, _ = lattice_quad(one, one, H)
        assert val == pytest.approx(oracles.r_full_integral_closed(H), rel=1e-9)

    def test_constant_entry_mc(self):
        rng = np.random.default_rng(11)
        est, se = oracles.lattice_entry_mc(0.75, 200_000, rng)
        assert abs(lattice_quad(one, one, 0.75)[0] - est) < 3 * se

    def test_symmetric(self):
        f = lambda t: 1 + cos1(t)
        g = lambda t: np.sqrt(2) * np.sin(2 * np.pi * t)
        assert lattice_quad(f, g, 0.7)[0] == pytest.approx(lattice_quad(g, f, 0.7)[0], abs=1e-10)

    def test_fourier_modes_decouple(self):
        # periodic kernel: distinct Fourier modes are orthogonal
        sin1 = lambda t: np.sqrt(2) * np.sin(2 * np.pi * t)
        assert abs(lattice_quad(one, cos1, 0.7)[0]) < 1e-10
        assert abs(lattice_quad(cos1, sin1, 0.7)[0]) < 1e-10


class TestY1Autocovariance:
    def test_variance_against_adaptive(self):
        H, D = 0.7, 0.02
        ref, _ = integrate.quad(lambda s: oracles._r_reg(H, s) * 2 * (D - s), 0, D,
                                weight="alg", wvar=(2 * H - 2, 0))
        assert y1_increment_autocovariance(H, [0], D)[0] == pytest.approx(ref, rel=1e-10)

    @pytest.mark.parametrize("j", [1, 2, 5, 30])
    def test_lags_against_adaptive(self, j):
        H, D = 0.75, 0.05

        def integrand(s):
            return (D - abs(s)) * oracles.r_kernel(H, abs(j * D + s))

        if j == 1:
            lo, _ = integrate.quad(lambda s: oracles._r_reg(H, s) * s, 0, D,
                                   weight="alg", wvar=(2 * H - 2, 0))
            hi, _ = integrate.quad(lambda s: integrand(s), 0, D, epsabs=1e-14)
            ref = lo + hi
        else:
            ref, _ = integrate.quad(integrand, -D, D, epsabs=1e-14, epsrel=1e-12)
        assert y1_increment_autocovariance(H, [j], D)[0] == pytest.approx(ref, rel=1e-8)

    def test_sum_is_total_variance(self):
        # Var(Y_T) = sum over the Toeplitz matrix of increment covariances
        H, D, N = 0.75, 0.1, 50
        c = y1_increment_autocovariance(H, np.arange(N), D)
        k = np.arange(-(N - 1), N)
        total = np.sum((N - np.abs(k)) * c[np.abs(k)])
        T = N * D
        ref, _ = integrate.quad(lambda s: oracles._r_reg(H, s) * 2 * (T - s), 0, T,
                                weight="alg", wvar=(2 * H - 2, 0), limit=200)
        assert total == pytest.approx(ref, rel=1e-8)
