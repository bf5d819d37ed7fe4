"""Cone geometry, strip coordinates and transformed operators.

A sector V_mu of opening mu*pi with vertex at the origin is mapped to the
half-strip (t, theta) in [0, inf) x [0, mu*pi] by t = -ln|x|.  Decay in r
becomes exponential decay in t.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import RectBivariateSpline


class Regime(enum.Enum):
    SHARP = "sharp"  # mu < 1/2
    WIDE = "wide"  # mu >= 1/2


@dataclass(frozen=True)
class ConeGeometry:
    """Sector of opening angle ``mu * pi``.

    ``mu_rational`` holds the exact value when the opening is rational; the
    exponent ledger then does all collision/resonance tests in integers.
    """

    mu: float
    mu_rational: Optional[Fraction] = None
    regime: Regime = field(init=False)

    def __post_init__(self):
        mu = self.mu
        if isinstance(mu, Fraction):
            object.__setattr__(self, "mu_rational", mu)
            mu = float(mu)
        if self.mu_rational is not None:
            exact = Fraction(self.mu_rational)
            object.__setattr__(self, "mu_rational", exact)
            mu = float(exact)
        mu = float(mu)
        if not (0.0 < mu < 1.0) or not math.isfinite(mu):
            raise ValueError(f"cone opening fraction must lie in (0, 1), got {mu!r}")
        object.__setattr__(self, "mu", mu)
        if self.mu_rational is not None:
            sharp = self.mu_rational < Fraction(1, 2)
        else:
            sharp = mu < 0.5
        object.__setattr__(self, "regime", Regime.SHARP if sharp else Regime.WIDE)

    @classmethod
    def rational(cls, p: int, q: int) -> "ConeGeometry":
        return cls(float(Fraction(p, q)), Fraction(p, q))

    @classmethod
    def parse(cls, text: Union[str, float, int]) -> "ConeGeometry":
        """Build from ``"2/5"``-style text (exact) or a float."""
        if isinstance(text, str) and "/" in text:
            frac = Fraction(text.strip())
            return cls(float(frac), frac)
        return cls(float(text))

    @property
    def angle(self) -> float:
        return self.mu * math.pi

    @property
    def is_sharp(self) -> bool:
        return self.regime is Regime.SHARP

    def contains(self, x, y, tol: float = 0.0) -> np.ndarray:
        theta = np.arctan2(y, x)
        return (theta >= -tol) & (theta <= self.angle + tol)

    def describe(self) -> dict:
        out = {"mu": self.mu, "regime": self.regime.value}
        if self.mu_rational is not None:
            out["mu_rational"] = [self.mu_rational.numerator, self.mu_rational.denominator]
        return out


@dataclass(frozen=True)
class AffineMap2:
    """Invertible linear map of the plane (2x2 matrix)."""

    matrix: np.ndarray
    inverse: np.ndarray = field(init=False, repr=False)
    determinant: float = field(init=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (2, 2):
            raise ValueError("AffineMap2 needs a 2x2 matrix")
        det = float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
        if det == 0.0 or not math.isfinite(det):
            raise ValueError("AffineMap2 matrix is singular")
        inv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
        if np.abs(m @ inv - np.eye(2)).max() > 1e-12:
            raise ValueError("AffineMap2 matrix too ill-conditioned to invert")
        m.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "inverse", inv)
        object.__setattr__(self, "determinant", det)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix.T

    def apply_inverse(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.inverse.T

    @classmethod
    def identity(cls) -> "AffineMap2":
        return cls(np.eye(2))


@dataclass(frozen=True)
class Quadratic:
    """q(x) = x.H.x / 2 + g.x + c0, evaluated exactly; Hessian is ``hessian``."""

    hessian: np.ndarray
    gradient: np.ndarray = field(default_factory=lambda: np.zeros(2))
    constant: float = 0.0

    def __post_init__(self):
        h = np.array(self.hessian, dtype=float)
        h = 0.5 * (h + h.T)
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "gradient", np.array(self.gradient, dtype=float))

    def __call__(self, x, y=None):
        if y is None:
            pts = np.asarray(x, dtype=float)
            x, y = pts[..., 0], pts[..., 1]
        h = self.hessian
        g = self.gradient
        return (0.5 * (h[0, 0] * x * x + h[1, 1] * y * y) + h[0, 1] * x * y
                + g[0] * x + g[1] * y + self.constant)

    @property
    def det_hessian(self) -> float:
        h = self.hessian
        return float(h[0, 0] * h[1, 1] - h[0, 1] ** 2)

    @property
    def is_convex(self) -> bool:
        return self.hessian[0, 0] > 0 and self.det_hessian > 0

    def compose(self, amap: AffineMap2) -> "Quadratic":
        """Return q o A."""
        a = amap.matrix
        return Quadratic(a.T @ self.hessian @ a, a.T @ self.gradient, self.constant)

    @classmethod
    def half_norm_squared(cls) -> "Quadratic":
        return cls(np.eye(2))


def model_quadratic(c: float, sign: int = +1) -> Quadratic:
    """P_c^{+/-} = |x|^2/2 +/- sqrt(1-c) x1 x2, with det D^2 = c."""
    if not 0.0 < c <= 1.0:
        raise ValueError("c must lie in (0, 1]")
    s = math.sqrt(1.0 - c) * (1 if sign >= 0 else -1)
    return Quadratic(np.array([[1.0, s], [s, 1.0]]))


def affine_normalizer(c: float) -> Tuple[AffineMap2, ConeGeometry]:
    """Map A with P_c^+ o A = |x|^2/2, and the cone A^{-1}(first quadrant).

    The returned cone has opening arccos(sqrt(1-c))/pi, which lies in (0, 1/2).
    """
    if not 0.0 < c < 1.0:
        raise ValueError(f"c must lie in (0, 1), got {c!r}")
    rc = math.sqrt(c)
    matrix = np.array([[1.0, -math.sqrt(1.0 - c) / rc], [0.0, 1.0 / rc]])
    mu = math.acos(math.sqrt(1.0 - c)) / math.pi
    return AffineMap2(matrix), ConeGeometry(mu)


class HarmonicMode:
    """h_i(x) = |x|^{i/mu} sin(i theta / mu); harmonic, zero on both edges."""

    def __init__(self, i: int, cone: ConeGeometry):
        if int(i) != i or i <= 0:
            raise ValueError("harmonic mode index must be a positive integer")
        self.i = int(i)
        self.cone = cone
        self.rate = self.i / cone.mu

    def polar(self, r, theta):
        r = np.asarray(r, dtype=float)
        return r ** self.rate * self._sine(theta)

    def strip(self, t, theta):
        return np.exp(-self.rate * np.asarray(t, dtype=float)) * self._sine(theta)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.polar(np.hypot(x, y), np.arctan2(y, x))

    def _sine(self, theta):
        # sin(i*theta/mu) = sin(pi * i * theta/angle), reduced so both edges give exact zeros
        return sin_pi(self.i * np.asarray(theta, dtype=float) / self.cone.angle)


def sin_pi(x):
    """sin(pi*x) with exact zeros at integers."""
    x = np.asarray(x, dtype=float)
    n = np.round(x)
    sign = np.where(np.mod(n, 2) == 0, 1.0, -1.0)
    return sign * np.sin(np.pi * (x - n))


def harmonic_mode(i: int, cone: ConeGeometry) -> HarmonicMode:
    return HarmonicMode(i, cone)


def strip_det_hessian(v_t, v_theta, v_tt, v_ttheta, v_thetatheta, t):
    """det D^2 v at the Cartesian point (r, theta) = (e^{-t}, theta).

    Arguments are strip-coordinate derivatives of v~(t, theta).  Works
    elementwise on arrays.
    """
    a = v_tt + v_t
    b = v_thetatheta - v_t
    m = v_ttheta + v_theta
    return np.exp(4.0 * np.asarray(t, dtype=float)) * (a * b - m * m)


@dataclass(frozen=True)
class StripField:
    """Samples of a function on the window [t0, t1] x [0, mu*pi].

    ``values[k, l]`` is the sample at ``(t[k], theta[l])``; both grids are
    uniform and include their endpoints.
    """

    cone: ConeGeometry
    t: np.ndarray
    theta: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        th = np.asarray(self.theta, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or th.ndim != 1 or t.size < 3 or th.size < 3:
            raise ValueError("strip field needs at least 3 nodes in t and theta")
        if vals.shape != (t.size, th.size):
            raise ValueError(f"values shape {vals.shape} does not match grid ({t.size}, {th.size})")
        if t[0] < 0:
            raise ValueError("strip window must have t0 >= 0 (radius <= 1)")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(th) <= 0):
            raise ValueError("strip grids must be strictly increasing")
        if abs(th[0]) > 1e-14 or abs(th[-1] - self.cone.angle) > 1e-12:
            raise ValueError("theta grid must run from 0 to mu*pi")
        for arr in (t, th, vals):
            arr.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "values", vals)

    @property
    def t_range(self) -> Tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    @property
    def h_t(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def h_theta(self) -> float:
        return float(self.theta[1] - self.theta[0])

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def from_function(cls, func: Callable, cone: ConeGeometry, window: Sequence[float],
                      resolution: Sequence[int]) -> "StripField":
        t, th = strip_grid(cone, window, resolution)
        tt, thth = np.meshgrid(t, th, indexing="ij")
        return cls(cone, t, th, np.asarray(func(tt, thth), dtype=float) * np.ones_like(tt))

    def with_values(self, values) -> "StripField":
        return StripField(self.cone, self.t, self.theta, values)

    def __sub__(self, other: "StripField") -> "StripField":
        if other.values.shape != self.values.shape:
            raise ValueError("strip fields live on different grids")
        return self.with_values(self.values - other.values)

    def laplacian(self) -> np.ndarray:
        """Second-order discrete v_tt + v_thetatheta at interior nodes."""
        v = self.values
        vtt = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / self.h_t ** 2
        vss = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / self.h_theta ** 2
        return vtt + vss

    def restrict(self, window: Sequence[float]) -> "StripField":
        t0, t1 = window
        keep = (self.t >= t0 - 1e-12) & (self.t <= t1 + 1e-12)
        if keep.sum() < 3:
            raise ValueError(f"window {tuple(window)} holds fewer than 3 t-rows")
        return StripField(self.cone, self.t[keep], self.theta, self.values[keep])

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write("t,theta,value\n")
            for k, tk in enumerate(self.t):
                for l, th in enumerate(self.theta):
                    fh.write(f"{tk:.17g},{th:.17g},{self.values[k, l]:.17g}\n")

    @classmethod
    def from_csv(cls, path, cone: ConeGeometry) -> "StripField":
        with Path(path).open() as fh:
            reader = csv.DictReader(fh)
            rows = [(float(r["t"]), float(r["theta"]), float(r["value"])) for r in reader]
        data = np.array(rows)
        t = np.unique(data[:, 0])
        th = np.unique(data[:, 1])
        return cls(cone, t, th, data[:, 2].reshape(t.size, th.size))


def strip_grid(cone: ConeGeometry, window: Sequence[float], resolution: Sequence[int]):
    t0, t1 = (float(w) for w in window)
    if t0 < 0:
        raise ValueError("negative t means radius > 1; strip windows start at t0 >= 0")
    if not t1 > t0:
        raise ValueError("strip window must satisfy t1 > t0")
    if isinstance(resolution, (int, np.integer)):
        n_t = n_th = int(resolution)
    else:
        n_t, n_th = (int(n) for n in resolution)
    if n_t < 3 or n_th < 3:
        raise ValueError("strip resolution must be at least 3 x 3")
    t = np.linspace(t0, t1, n_t)
    th = np.linspace(0.0, cone.angle, n_th)
    return t, th


@dataclass(frozen=True)
class CartesianGrid:
    """Function samples on a rectilinear Cartesian grid (``values[i, j]`` at ``(x[i], y[j])``)."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.shape != (x.size, y.size):
            raise ValueError("grid values must have shape (len(x), len(y))")
        if x.size < 4 or y.size < 4:
            raise ValueError("bicubic interpolation needs at least 4 nodes per axis")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "values", v)

    def interpolator(self) -> RectBivariateSpline:
        return RectBivariateSpline(self.x, self.y, self.values, kx=3, ky=3, s=0)

    def covers(self, px, py, tol: float = 1e-12) -> np.ndarray:
        return ((px >= self.x[0] - tol) & (px <= self.x[-1] + tol)
                & (py >= self.y[0] - tol) & (py <= self.y[-1] + tol))


def to_strip(source, cone: ConeGeometry, window: Sequence[float], resolution,
             boundary: Optional[Callable] = None) -> StripField:
    """Resample a Cartesian function near the vertex onto strip coordinates.

    ``source`` is either a :class:`CartesianGrid` (bicubic spline
    interpolation) or a callable ``v(points) -> values`` taking an ``(n, 2)``
    array; callables report uncovered points as NaN.  The rows theta = 0 and
    theta = mu*pi are overwritten with ``boundary(t)`` (zero by default).
    """
    t, th = strip_grid(cone, window, resolution)
    tt, thth = np.meshgrid(t, th, indexing="ij")
    r = np.exp(-tt)
    px = r * np.cos(thth)
    py = r * np.sin(thth)
    interior = np.s_[:, 1:-1]
    qx, qy = px[interior], py[interior]

    if isinstance(source, CartesianGrid):
        if not np.all(source.covers(qx, qy)):
            raise ValueError("insufficient coverage: strip window extends beyond the sampled grid")
        vals = source.interpolator().ev(qx.ravel(), qy.ravel()).reshape(qx.shape)
    elif callable(source):
        pts = np.stack([qx.ravel(), qy.ravel()], axis=1)
        vals = np.asarray(source(pts), dtype=float).reshape(qx.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("insufficient coverage: source undefined at some strip nodes")
    else:
        raise TypeError("source must be a CartesianGrid or a callable")

    out = np.empty_like(tt)
    out[interior] = vals
    edge = np.zeros_like(t) if boundary is None else np.asarray(boundary(t), dtype=float) * np.ones_like(t)
    out[:, 0] = edge
    out[:, -1] = edge
    return StripField(cone, t, th, out)
