import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from corner_ma.cone import (AffineMap2, CartesianGrid, ConeGeometry, Quadratic, Regime, StripField,
                            affine_normalizer, harmonic_mode, model_quadratic, strip_det_hessian,
                            strip_grid, to_strip)
from oracles import X, Y, fd_det, fd_laplacian, strip_derivatives


class TestConeGeometry:
    def test_regimes(self):
        assert ConeGeometry(0.3).regime is Regime.SHARP
        assert ConeGeometry(0.5).regime is Regime.WIDE
        assert ConeGeometry.rational(2, 3).regime is Regime.WIDE

    def test_rational_is_exact(self):
        c = ConeGeometry.rational(2, 5)
        assert c.mu == 0.4 and c.mu_rational.numerator == 2
        assert ConeGeometry.parse("2/5") == c

    @pytest.mark.parametrize("mu", [0.0, 1.0, -0.2, 1.5])
    def test_rejects_out_of_range(self, mu):
        with pytest.raises(ValueError):
            ConeGeometry(mu)

    def test_angle(self):
        assert ConeGeometry(0.25).angle == pytest.approx(math.pi / 4)


class TestAffineNormalizer:
    def test_half(self):
        A, cone = affine_normalizer(0.5)
        assert cone.mu == pytest.approx(0.25, abs=1e-15)
        np.testing.assert_allclose(A.matrix, [[1, -1], [0, math.sqrt(2)]], atol=1e-15)

    def test_three_quarters(self):
        assert affine_normalizer(0.75)[1].mu == pytest.approx(1 / 3, abs=1e-15)

    def test_sin_squared(self):
        assert affine_normalizer(math.sin(0.3 * math.pi) ** 2)[1].mu == pytest.approx(0.3, abs=1e-14)

    @pytest.mark.parametrize("c", [0.0, 1.0, -0.1, 1.2])
    def test_rejects(self, c):
        with pytest.raises(ValueError):
            affine_normalizer(c)

    @pytest.mark.parametrize("c", [0.25, 0.5, 0.75, math.sin(0.3 * math.pi) ** 2])
    def test_model_quadratic_identities(self, c):
        rng = np.random.default_rng(7)
        pts = rng.uniform(-1, 1, (1000, 2))
        A, cone = affine_normalizer(c)
        P = model_quadratic(c)
        assert abs(P.det_hessian - c) < 1e-15
        np.testing.assert_allclose(P(A(pts)), 0.5 * np.sum(pts ** 2, axis=1), atol=1e-12, rtol=0)
        s = rng.uniform(0.01, 2, 50)
        edge = A.apply_inverse(np.stack([np.zeros_like(s), s], axis=1))
        np.testing.assert_allclose(np.hypot(edge[:, 0], edge[:, 1]), s, atol=1e-12, rtol=0)
        # A^{-1} maps the second axis to the far edge of the cone
        np.testing.assert_allclose(np.arctan2(edge[:, 1], edge[:, 0]), cone.angle, atol=1e-12)

    def test_affine_map_inverse(self):
        A = AffineMap2(np.array([[2.0, 1.0], [0.5, 3.0]]))
        assert np.abs(A.matrix @ A.inverse - np.eye(2)).max() < 1e-12
        with pytest.raises(ValueError):
            AffineMap2(np.array([[1.0, 2.0], [2.0, 4.0]]))


class TestHarmonicMode:
    def test_half_opening_is_product(self):
        h = harmonic_mode(1, ConeGeometry(0.5))
        rng = np.random.default_rng(1)
        x, y = rng.uniform(0.01, 1, (2, 20))
        np.testing.assert_allclose(h(x, y), 2 * x * y, rtol=1e-12)

    @pytest.mark.parametrize("i", [1, 2, 3])
    def test_edges_exactly_zero(self, i):
        cone = ConeGeometry(0.4)
        h = harmonic_mode(i, cone)
        r = np.linspace(0.01, 1, 17)
        assert np.all(h.polar(r, 0.0) == 0.0)
        assert np.all(h.polar(r, cone.angle) == 0.0)

    def test_discrete_harmonicity(self):
        cone = ConeGeometry(0.4)
        h = harmonic_mode(1, cone)
        rng = np.random.default_rng(3)
        r = rng.uniform(0.3, 0.9, 100)
        th = rng.uniform(0.2, cone.angle - 0.2, 100)
        x, y = r * np.cos(th), r * np.sin(th)
        e1 = np.abs(fd_laplacian(h, x, y, 1e-2)).max()
        e2 = np.abs(fd_laplacian(h, x, y, 5e-3)).max()
        assert 3.2 <= e1 / e2 <= 4.8

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            harmonic_mode(0, ConeGeometry(0.4))


class TestStripDetHessian:
    def test_half_norm(self):
        # v~ = e^{-2t}/2
        t = 0.7
        e = math.exp(-2 * t)
        assert strip_det_hessian(-e, 0.0, 2 * e, 0.0, 0.0, t) == pytest.approx(1.0, rel=1e-14)

    def test_harmonic_mode_symbolic(self):
        mu = 0.4
        a = 1 / mu
        expr = sp.exp(-a * sp.Symbol("t")) * sp.sin(a * sp.Symbol("theta"))
        t_, th_ = sp.symbols("t theta")
        vals = [sp.lambdify((t_, th_), d) for d in (sp.diff(expr, t_), sp.diff(expr, th_), sp.diff(expr, t_, 2),
                                                     sp.diff(expr, t_, th_), sp.diff(expr, th_, 2))]
        for t, th in [(0.5, 0.3), (1.7, 1.0), (3.0, 0.05)]:
            got = strip_det_hessian(*(f(t, th) for f in vals), t)
            want = -a * a * (a - 1) ** 2 * math.exp(-(2 * a - 4) * t)
            assert got == pytest.approx(want, rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_cartesian_fd(self, seed):
        rng = np.random.default_rng(seed)
        coef = rng.normal(size=(4, 4))
        expr = sum(coef[i, j] * X ** i * Y ** j for i in range(4) for j in range(4) if i + j <= 4)
        expr = expr + (X ** 2 + Y ** 2) / 2
        derivs = strip_derivatives(expr)
        f = sp.lambdify((X, Y), expr, "numpy")
        r = rng.uniform(0.2, 0.8, 100)
        th = rng.uniform(0.1, 1.2, 100)
        t = -np.log(r)
        x, y = r * np.cos(th), r * np.sin(th)
        strip_val = strip_det_hessian(*(d(t, th) for d in derivs), t)
        errs = [np.abs(strip_val - fd_det(f, x, y, h)).max() for h in (2e-2, 1e-2)]
        assert errs[1] < 1e-3
        assert 3.2 <= errs[0] / errs[1] <= 4.8


class TestStripField:
    def test_invariants(self):
        cone = ConeGeometry(0.4)
        with pytest.raises(ValueError):
            strip_grid(cone, (-0.5, 1.0), (10, 10))
        with pytest.raises(ValueError):
            strip_grid(cone, (1.0, 1.0), (10, 10))
        with pytest.raises(ValueError):
            strip_grid(cone, (0.0, 1.0), (2, 10))
        t, th = strip_grid(cone, (1, 2), (5, 9))
        assert th[0] == 0.0 and th[-1] == cone.angle

    def test_csv_roundtrip(self, tmp_path):
        cone = ConeGeometry(0.4)
        f = StripField.from_function(lambda t, th: np.exp(-t) * np.sin(th / 0.4), cone, (1, 2), (6, 7))
        path = tmp_path / "f.csv"
        f.to_csv(path)
        assert path.read_text().splitlines()[0] == "t,theta,value"
        g = StripField.from_csv(path, cone)
        np.testing.assert_array_equal(f.values, g.values)

    def test_laplacian_transform_identity(self):
        """Strip Laplacian of v~ equals e^{-2t} times the Cartesian Laplacian, O(h^2)."""
        expr = X ** 3 * Y - 2 * X * Y ** 2 + X ** 4 + 0.5 * Y ** 3
        f = sp.lambdify((X, Y), expr, "numpy")
        cone = ConeGeometry(0.4)
        pts_t = np.array([0.4, 0.8, 1.2, 1.6])
        pts_th = np.array([0.3, 0.6, 0.9])
        tt, thth = np.meshgrid(pts_t, pts_th, indexing="ij")

        def vt(t, th):
            r = np.exp(-t)
            return f(r * np.cos(th), r * np.sin(th))

        errs = []
        for h in (2e-2, 1e-2):
            strip_lap = fd_laplacian(vt, tt, thth, h)
            r = np.exp(-tt)
            cart = np.exp(-2 * tt) * fd_laplacian(f, r * np.cos(thth), r * np.sin(thth), h)
            errs.append(np.abs(strip_lap - cart).max())
        assert 3.2 <= errs[0] / errs[1] <= 4.8


class TestToStrip:
    def test_zero(self):
        cone = ConeGeometry(0.4)
        f = to_strip(lambda p: np.zeros(len(p)), cone, (1, 3), (11, 9))
        assert np.all(f.values == 0)

    def test_radial(self):
        cone = ConeGeometry(0.4)
        f = to_strip(lambda p: np.sum(p * p, axis=1), cone, (0.5, 2), (11, 9), boundary=lambda t: np.exp(-2 * t))
        np.testing.assert_allclose(f.values, np.exp(-2 * f.t)[:, None] * np.ones_like(f.values), rtol=1e-13)

    def test_bicubic_from_grid(self):
        cone = ConeGeometry(0.4)
        h = harmonic_mode(1, cone)
        xs = np.linspace(-0.12, 0.4, 1024)
        ys = np.linspace(0.0, 0.4, 1024)
        XX, YY = np.meshgrid(xs, ys, indexing="ij")
        grid = CartesianGrid(xs, ys, -0.3 * h(XX, YY))
        f = to_strip(grid, cone, (1, 3), (41, 33))
        exact = -0.3 * np.exp(-2.5 * f.t)[:, None] * np.sin(2.5 * f.theta)[None, :]
        assert np.abs(f.values - exact).max() < 1e-6

    def test_insufficient_coverage(self):
        cone = ConeGeometry(0.4)
        xs = np.linspace(0, 0.1, 20)
        grid = CartesianGrid(xs, xs, np.zeros((20, 20)))
        with pytest.raises(ValueError, match="insufficient coverage"):
            to_strip(grid, cone, (1, 3), (11, 9))
        with pytest.raises(ValueError, match="insufficient coverage"):
            to_strip(lambda p: np.full(len(p), np.nan), cone, (1, 3), (11, 9))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_quadratic_compose_property(c, s):
    """q o A has Hessian A^T H A: determinant scales by det(A)^2."""
    A = AffineMap2(np.array([[1.0, s], [0.0, 1.0 + c]]))
    q = model_quadratic(c)
    assert q.compose(A).det_hessian == pytest.approx(c * A.determinant ** 2, rel=1e-12)
