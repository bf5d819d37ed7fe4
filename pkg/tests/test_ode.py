import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from corner_ma.cone import ConeGeometry
from corner_ma.ode import (LiftError, ModeOperator, QuadratureError, ResonanceError, ThetaProfile,
                           helmholtz_residual, lift_residual, orthonormal_basis, resonant_lift,
                           resonant_mode, solve_decaying_mode, theta_bvp)

CONE = ConeGeometry(0.4)
L = CONE.angle


def strip_laplacian_of_sum(gamma, w, t, theta_nodes=True):
    """Apply Lap~ to sum_j t^j e^{-gamma t} w_j: t-derivatives exact, theta spectral."""
    out = np.zeros(w[0].n)
    for j, wj in enumerate(w):
        # d^2/dt^2 of t^j e^{-gamma t}
        d2 = (gamma * gamma * t ** j - 2 * gamma * j * t ** (j - 1) * (j >= 1)
              + j * (j - 1) * t ** (j - 2) * (j >= 2)) * math.exp(-gamma * t)
        out += d2 * wj.values + t ** j * math.exp(-gamma * t) * wj.derivative(2).values
    return out


class TestBasis:
    @pytest.mark.parametrize("i,j", [(1, 1), (1, 2), (2, 3), (3, 3), (1, 5)])
    def test_orthonormal_adaptive_quadrature(self, i, j):
        phi_i, phi_j = orthonormal_basis(CONE, i), orthonormal_basis(CONE, j)
        val, _ = integrate.quad(lambda th: phi_i(th) * phi_j(th), 0, L, epsabs=1e-13, epsrel=1e-13)
        assert abs(val - (i == j)) < 1e-12

    def test_orthonormal_clenshaw_curtis(self):
        phis = [ThetaProfile.from_function(orthonormal_basis(CONE, i), CONE) for i in range(1, 6)]
        gram = np.array([[a.inner(b) for b in phis] for a in phis])
        assert np.abs(gram - np.eye(5)).max() < 1e-12

    @pytest.mark.parametrize("i", [1, 2])
    def test_kernel_discrete_laplacian(self, i):
        phi = orthonormal_basis(CONE, i)
        k = i / CONE.mu
        t = np.linspace(1.0, 2.0, 7)[:, None]
        th = np.linspace(0.2, L - 0.2, 9)[None, :]
        f = lambda tt, hh: np.exp(-k * tt) * phi(hh)
        errs = []
        for h in (2e-2, 1e-2, 5e-3):
            lap = (f(t + h, th) + f(t - h, th) + f(t, th + h) + f(t, th - h) - 4 * f(t, th)) / h ** 2
            errs.append(np.abs(lap).max())
        assert errs[-1] < 1e-3
        for a, b in zip(errs, errs[1:]):
            assert 3.2 <= a / b <= 4.8


class TestModeOperator:
    def test_rate(self):
        assert ModeOperator(2, CONE).rate == pytest.approx(5.0)

    def test_rejects(self):
        with pytest.raises(ValueError):
            ModeOperator(0, CONE)

    def test_zero_rhs(self):
        psi = solve_decaying_mode(ModeOperator(1, CONE), lambda s: 0.0, 1.0, 2.0)
        assert np.all(psi(np.linspace(1, 5, 9)) == 0.0)

    @pytest.mark.parametrize("gamma", [3.0, 4.0])
    def test_fast_exponential(self, gamma):
        # gamma > i/mu: no homogeneous part is generated
        k = 2.5
        psi = solve_decaying_mode(ModeOperator(1, CONE), lambda s: math.exp(-gamma * s), 1.0, gamma)
        t = np.linspace(1.0, 8.0, 8)
        np.testing.assert_allclose(psi(t), np.exp(-gamma * t) / (gamma ** 2 - k ** 2), rtol=1e-9)

    def test_slow_exponential(self):
        # gamma < i/mu: the closed form plus a multiple of e^{-kt}
        gamma, k, T = 2.0, 2.5, 1.0
        psi = solve_decaying_mode(ModeOperator(1, CONE), lambda s: math.exp(-gamma * s), T, gamma)
        t = np.linspace(1.5, 8.0, 6)
        rest = (psi(t) - np.exp(-gamma * t) / (gamma ** 2 - k ** 2)) * np.exp(k * t)
        np.testing.assert_allclose(rest, rest[0], rtol=1e-8)

    def test_resonant_exponential(self):
        gamma = 2.5
        psi = solve_decaying_mode(ModeOperator(1, CONE), lambda s: math.exp(-gamma * s), 1.0, gamma)
        t = np.linspace(1.5, 8.0, 6)
        rest = (psi(t) + t * np.exp(-gamma * t) / (2 * gamma)) * np.exp(gamma * t)
        np.testing.assert_allclose(rest, rest[0], rtol=1e-8)

    @pytest.mark.parametrize("gamma,m", [(2.0, 0), (2.0, 1), (3.0, 1), (1.0, 2)])
    def test_satisfies_ode(self, gamma, m):
        k = 2.5
        rhs = lambda s: s ** m * math.exp(-gamma * s)
        psi = solve_decaying_mode(ModeOperator(1, CONE), rhs, 1.0, gamma, m=m)
        t = np.linspace(2.0, 6.0, 5)
        h = 1e-3
        lhs = (psi(t + h) - 2 * psi(t) + psi(t - h)) / h ** 2 - k * k * psi(t)
        np.testing.assert_allclose(lhs, [rhs(s) for s in t], rtol=1e-5)

    @pytest.mark.parametrize("m", [0, 1])
    def test_decay_bound(self, m):
        gamma, T = 2.0, 1.0
        psi = solve_decaying_mode(ModeOperator(1, CONE), lambda s: s ** m * math.exp(-gamma * s), T, gamma, m=m)
        t = np.linspace(T, T + 20, 41)
        ratio = np.abs(psi(t)) / (t ** m * np.exp(-gamma * t))
        assert np.all(np.isfinite(ratio)) and ratio.max() < 10.0

    @pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
    def test_errors(self):
        op = ModeOperator(1, CONE)
        with pytest.raises(ValueError):
            solve_decaying_mode(op, lambda s: 0.0, 1.0, 0.0)
        psi = solve_decaying_mode(op, lambda s: float("nan"), 1.0, 2.0)
        with pytest.raises(QuadratureError):
            psi(2.0)


class TestThetaBVP:
    def test_sine_source(self):
        gamma, w_ = 3.0, 5.0
        h = ThetaProfile.sine(CONE, 2, 64)
        w = theta_bvp(gamma, h)
        np.testing.assert_allclose(w.values, h.values / (gamma ** 2 - w_ ** 2), atol=1e-12)

    def test_constant_source(self):
        gamma = 3.0
        w = theta_bvp(gamma, ThetaProfile.from_function(lambda th: 1.0, CONE))
        th = w.nodes
        exact = (1 - np.cos(gamma * th) - (1 - math.cos(gamma * L)) / math.sin(gamma * L) * np.sin(gamma * th)) / gamma ** 2
        np.testing.assert_allclose(w.values, exact, atol=1e-12)

    def test_resonant_rejected(self):
        with pytest.raises(ResonanceError, match="resonant"):
            theta_bvp(2.5, ThetaProfile.from_function(lambda th: 1.0, CONE))

    def test_near_resonance_warns(self):
        with pytest.warns(RuntimeWarning, match="near resonance"):
            theta_bvp(2.5 + 5e-9, ThetaProfile.from_function(lambda th: th, CONE))

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=11), st.floats(0.3, 7.0))
    def test_polynomial_sources(self, coef, gamma):
        if resonant_mode(gamma, CONE) is not None or abs(math.sin(gamma * L)) < 0.05:
            # conditioning near resonance is covered by the warning test
            return
        h = ThetaProfile.from_function(lambda th: np.polyval(coef, th), CONE)
        w = theta_bvp(gamma, h)
        assert w.values[0] == 0.0 and w.values[-1] == 0.0
        assert helmholtz_residual(gamma, w, h) < 1e-10 * max(1.0, h.sup())


class TestResonantLift:
    def test_nonresonant_reduces(self):
        h0 = ThetaProfile.from_function(lambda th: np.cos(th) - th, CONE)
        w = resonant_lift(3.0, [h0])
        assert len(w) == 2 and np.all(w[1].values == 0)
        np.testing.assert_array_equal(w[0].values, theta_bvp(3.0, h0).values)

    def test_resonant_sine(self):
        gamma = 2.5
        h0 = ThetaProfile.sine(CONE, 1)
        w0, w1 = resonant_lift(gamma, [h0])
        # w1 is proportional to the kernel sine with coefficient -<h0, phi>/(2 gamma <phi, phi>)
        np.testing.assert_allclose(w1.values, -h0.values / (2 * gamma), atol=1e-13)
        for t in (1.0, 2.0, 3.5):
            res = strip_laplacian_of_sum(gamma, [w0, w1], t) - math.exp(-gamma * t) * h0.values
            assert np.abs(res).max() < 1e-8
        assert w0.values[0] == w0.values[-1] == w1.values[0] == w1.values[-1] == 0.0

    def test_resonant_generic_source(self):
        gamma = 5.0
        h = [ThetaProfile.from_function(f, CONE) for f in (lambda th: th ** 2, lambda th: np.exp(th))]
        w = resonant_lift(gamma, h)
        assert len(w) == 3
        assert lift_residual(gamma, w, h) < 1e-9

    def test_two_powers_nonresonant(self):
        gamma = 3.0
        h = [ThetaProfile.from_function(f, CONE) for f in (lambda th: np.sin(3 * th), lambda th: th * (L - th))]
        w = resonant_lift(gamma, h)
        assert np.all(w[2].values == 0)
        assert lift_residual(gamma, w, h) < 1e-10
        for t in (1.0, 2.5):
            res = strip_laplacian_of_sum(gamma, w, t) - sum(t ** j * math.exp(-gamma * t) * h[j].values for j in range(2))
            assert np.abs(res).max() < 1e-10

    def test_unresolved_component_reported(self):
        with pytest.raises(LiftError, match="unresolved"):
            resonant_lift(2.5, [ThetaProfile.sine(CONE, 1)], lift_tol=-1.0)

    def test_empty_sources(self):
        with pytest.raises(ValueError):
            resonant_lift(2.5, [])


def test_profile_csv_roundtrip(tmp_path):
    p = ThetaProfile.from_function(np.sin, CONE, 17)
    p.to_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().startswith("theta,value\n")
    q = ThetaProfile.from_csv(tmp_path / "p.csv", CONE)
    np.testing.assert_array_equal(p.values, q.values)


def test_barycentric_interpolation():
    p = ThetaProfile.from_function(lambda th: np.cos(3 * th), CONE)
    th = np.linspace(0, L, 101)
    np.testing.assert_allclose(p(th), np.cos(3 * th), atol=1e-13)
