"""Linear building blocks on the strip: mode ODEs in t and two-point problems in theta.

Theta profiles live on Chebyshev-Lobatto nodes over [0, mu*pi]; the
operators d^2/dtheta^2 + gamma^2 are discretised by spectral collocation
with Dirichlet rows.
"""

from __future__ import annotations

import csv
import functools
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import integrate

from .cone import ConeGeometry, sin_pi

DEFAULT_NODES = 64
RESONANCE_TOL = 1e-9
NEAR_RESONANCE = 1e-8


class ResonanceError(ValueError):
    """The theta operator d^2 + gamma^2 is singular with Dirichlet data."""


class LiftError(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


# -- Chebyshev machinery ---------------------------------------------------

@functools.lru_cache(maxsize=32)
def _cheb(n_nodes: int):
    n = n_nodes - 1
    k = np.arange(n + 1)
    x = np.cos(np.pi * k / n)
    c = np.hstack([2.0, np.ones(n - 1), 2.0]) * (-1.0) ** k
    dx = x[:, None] - x[None, :]
    d = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    d -= np.diag(d.sum(axis=1))
    # Clenshaw-Curtis weights on [-1, 1]
    theta = np.pi * k / n
    w = np.zeros(n + 1)
    v = np.ones(n - 1)
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n * n - 1)
        for m in range(1, n // 2):
            v -= 2.0 * np.cos(2 * m * theta[1:-1]) / (4 * m * m - 1)
        v -= np.cos(n * theta[1:-1]) / (n * n - 1)
    else:
        w[0] = w[n] = 1.0 / (n * n)
        for m in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * m * theta[1:-1]) / (4 * m * m - 1)
    w[1:-1] = 2.0 * v / n
    bary = (-1.0) ** k
    bary[0] *= 0.5
    bary[-1] *= 0.5
    return x, d, w, bary


@functools.lru_cache(maxsize=32)
def _grid(length: float, n_nodes: int):
    x, d, w, bary = _cheb(n_nodes)
    nodes = 0.5 * length * (1.0 - x)
    nodes[0], nodes[-1] = 0.0, length
    d1 = -(2.0 / length) * d
    d2 = d1 @ d1
    weights = 0.5 * length * w
    for arr in (nodes, d1, d2, weights):
        arr.setflags(write=False)
    return nodes, d1, d2, weights, bary


def theta_nodes(cone: ConeGeometry, n_nodes: int = DEFAULT_NODES) -> np.ndarray:
    return _grid(cone.angle, n_nodes)[0]


@dataclass(frozen=True, eq=False)
class ThetaProfile:
    """A function c(theta) on [0, mu*pi], stored at Chebyshev-Lobatto nodes."""

    cone: ConeGeometry
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 3:
            raise ValueError("theta profile needs a 1-D array of at least 3 node values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def nodes(self) -> np.ndarray:
        return _grid(self.cone.angle, self.n)[0]

    @property
    def weights(self) -> np.ndarray:
        return _grid(self.cone.angle, self.n)[3]

    @classmethod
    def from_function(cls, func: Callable, cone: ConeGeometry, n_nodes: int = DEFAULT_NODES):
        nodes = theta_nodes(cone, n_nodes)
        return cls(cone, np.asarray(func(nodes), dtype=float) * np.ones_like(nodes))

    @classmethod
    def zeros(cls, cone: ConeGeometry, n_nodes: int = DEFAULT_NODES):
        return cls(cone, np.zeros(n_nodes))

    @classmethod
    def sine(cls, cone: ConeGeometry, mode: int, n_nodes: int = DEFAULT_NODES):
        """sin(mode * theta / mu) with exact zeros at both ends."""
        nodes = theta_nodes(cone, n_nodes)
        return cls(cone, sin_pi(mode * nodes / cone.angle))

    def derivative(self, order: int = 1) -> "ThetaProfile":
        _, d1, d2, _, _ = _grid(self.cone.angle, self.n)
        if order == 1:
            return ThetaProfile(self.cone, d1 @ self.values)
        if order == 2:
            return ThetaProfile(self.cone, d2 @ self.values)
        raise ValueError("only first and second derivatives are provided")

    def __call__(self, theta) -> np.ndarray:
        """Barycentric evaluation at arbitrary theta in [0, mu*pi]."""
        nodes, _, _, _, bary = _grid(self.cone.angle, self.n)
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        diff = th[:, None] - nodes[None, :]
        exact = diff == 0.0
        diff[exact] = 1.0
        kern = bary / diff
        out = (kern @ self.values) / kern.sum(axis=1)
        hit_rows, hit_cols = np.nonzero(exact)
        out[hit_rows] = self.values[hit_cols]
        return out.reshape(np.shape(theta))

    def inner(self, other: "ThetaProfile") -> float:
        return float(np.dot(self.weights, self.values * other.values))

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))

    def sup(self) -> float:
        return float(np.abs(self.values).max())

    def __add__(self, other):
        return ThetaProfile(self.cone, self.values + _vals(other))

    def __sub__(self, other):
        return ThetaProfile(self.cone, self.values - _vals(other))

    def __mul__(self, other):
        return ThetaProfile(self.cone, self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ThetaProfile(self.cone, -self.values)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            fh.write("theta,value\n")
            for th, v in zip(self.nodes, self.values):
                fh.write(f"{th:.17g},{v:.17g}\n")

    @classmethod
    def from_csv(cls, path, cone: ConeGeometry) -> "ThetaProfile":
        with Path(path).open() as fh:
            vals = [float(r["value"]) for r in csv.DictReader(fh)]
        return cls(cone, np.array(vals))


def _vals(other):
    return other.values if isinstance(other, ThetaProfile) else other


# -- mode ODE in t ---------------------------------------------------------

@dataclass(frozen=True)
class ModeOperator:
    """L_i psi = psi'' - (i/mu)^2 psi."""

    i: int
    cone: ConeGeometry

    def __post_init__(self):
        if int(self.i) != self.i or self.i < 1:
            raise ValueError("mode index must be a positive integer")

    @property
    def rate(self) -> float:
        return self.i / self.cone.mu

    def kernel(self):
        k = self.rate
        return (lambda t: np.exp(-k * np.asarray(t))), (lambda t: np.exp(k * np.asarray(t)))


def _tail_limit(start: float, gamma: float, rate: float, m: int) -> float:
    """Upper integration limit where the slowest integrand is below 1e-18 of its peak."""
    slowest = gamma - rate if gamma > rate else gamma + rate
    span = (18 * math.log(10) + m * math.log(start + 40.0 + 1.0)) / slowest
    return start + max(40.0, span)


def solve_decaying_mode(op: ModeOperator, rhs: Callable, T: float, gamma: float, m: int = 0,
                        rtol: float = 1e-12) -> Callable:
    """Decaying particular solution of L_i psi = rhs on (T, inf).

    ``gamma`` and ``m`` describe the bound |rhs(t)| <= C t^m e^{-gamma t}.
    For gamma <= i/mu the solution is

        -(1/2k) e^{-kt} int_T^t e^{ks} f ds - (1/2k) e^{kt} int_t^inf e^{-ks} f ds

    and for gamma > i/mu the first integral runs over (t, inf) with the
    opposite sign, so no e^{-kt} component is generated.  Here k = i/mu.
    Integrals use adaptive quadrature; the returned callable is vectorised.
    """
    if not gamma > 0:
        raise ValueError("decay rate gamma must be positive")
    k = op.rate
    resonant_or_slow = gamma <= k

    def _quad(func, a, b):
        if b <= a:
            return 0.0
        val, err = integrate.quad(func, a, b, epsabs=0.0, epsrel=rtol, limit=400)
        if not math.isfinite(val) or (err > 1e-8 * abs(val) and err > 1e-280):
            raise QuadratureError(f"quadrature did not converge: value {val:.3e}, "
                                  f"achieved error {err:.3e}")
        return val

    def psi_scalar(t: float) -> float:
        t = float(t)
        hi = _tail_limit(t, gamma, k, m)
        far = _quad(lambda s: math.exp(-k * (s - t)) * rhs(s), t, hi)  # e^{kt} int e^{-ks} f
        if resonant_or_slow:
            near = _quad(lambda s: math.exp(k * (s - t)) * rhs(s), T, t)  # e^{-kt} int_T^t e^{ks} f
            return -(near + far) / (2 * k)
        near = _quad(lambda s: math.exp(k * (s - t)) * rhs(s), t, hi)
        return (near - far) / (2 * k)

    def psi(t):
        arr = np.asarray(t, dtype=float)
        out = np.array([psi_scalar(x) for x in arr.ravel()])
        return out.reshape(arr.shape) if arr.ndim else float(out[0])

    return psi


# -- theta two-point problems ----------------------------------------------

def resonant_mode(gamma: float, cone: ConeGeometry) -> Optional[int]:
    """Index n with gamma = n/mu (to RESONANCE_TOL), else None."""
    n = round(gamma * cone.mu)
    if n >= 1 and abs(gamma * cone.mu - n) < RESONANCE_TOL * max(1.0, n):
        return int(n)
    return None


def _helmholtz_interior(gamma: float, cone: ConeGeometry, n_nodes: int) -> np.ndarray:
    """Interior block of d^2 + gamma^2; the Dirichlet unknowns are eliminated (they are zero)."""
    _, _, d2, _, _ = _grid(cone.angle, n_nodes)
    return d2[1:-1, 1:-1] + gamma * gamma * np.eye(n_nodes - 2)


def helmholtz_residual(gamma: float, w: ThetaProfile, h: ThetaProfile) -> float:
    """sup over interior nodes of |w'' + gamma^2 w - h|."""
    r = w.derivative(2).values + gamma * gamma * w.values - h.values
    return float(np.abs(r[1:-1]).max())


def theta_bvp(gamma: float, h: ThetaProfile) -> ThetaProfile:
    """Solve w'' + gamma^2 w = h on (0, mu*pi) with w = 0 at both ends.

    Raises :class:`ResonanceError` when gamma is one of i/mu, where the
    problem is singular.
    """
    cone = h.cone
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    n_res = resonant_mode(gamma, cone)
    if n_res is not None:
        raise ResonanceError(f"resonant: gamma = {gamma} equals {n_res}/mu; use resonant_lift "
                             "or orthogonality reduction")
    if abs(math.sin(gamma * cone.angle)) < NEAR_RESONANCE:
        warnings.warn(f"theta problem near resonance (|sin(gamma mu pi)| < {NEAR_RESONANCE}); "
                      "solution is badly conditioned", RuntimeWarning, stacklevel=2)
    w = np.zeros(h.n)
    w[1:-1] = np.linalg.solve(_helmholtz_interior(gamma, cone, h.n), h.values[1:-1])
    return ThetaProfile(cone, w)


def _bordered_solve(gamma: float, g: ThetaProfile, kernel: ThetaProfile):
    """Solve w'' + gamma^2 w = g - lam*kernel, w(ends) = 0, <w, kernel> = 0.

    Returns (w, lam); lam measures the part of g the singular operator
    cannot reach.
    """
    n = g.n - 2
    a = np.zeros((n + 1, n + 1))
    a[:n, :n] = _helmholtz_interior(gamma, g.cone, g.n)
    a[:n, n] = kernel.values[1:-1]
    a[n, :n] = (kernel.weights * kernel.values)[1:-1]
    b = np.zeros(n + 1)
    b[:n] = g.values[1:-1]
    sol = np.linalg.solve(a, b)
    w = np.zeros(g.n)
    w[1:-1] = sol[:n]
    return ThetaProfile(g.cone, w), float(sol[n])


def resonant_lift(gamma: float, sources: Sequence[ThetaProfile], lift_tol: float = 1e-8) -> List[ThetaProfile]:
    """Profiles w_0..w_{m+1} with Lap~(sum t^j e^{-gamma t} w_j) = sum t^j e^{-gamma t} h_j.

    Matching powers of t gives, for j = 0..m,

        w_j'' + gamma^2 w_j - 2(j+1) gamma w_{j+1} + (j+2)(j+1) w_{j+2} = h_j

    with w_{m+2} = 0 and w_{m+1}'' + gamma^2 w_{m+1} = 0.  Away from
    resonance w_{m+1} = 0 and the system is solved from the top down.  At a
    resonance gamma = n/mu the kernel sin(n theta/mu) components of
    w_1..w_{m+1} are fixed by the solvability conditions, and the free
    kernel component of w_0 is set to zero (minimal norm).
    """
    if not sources:
        raise ValueError("resonant_lift needs at least one source profile")
    cone = sources[0].cone
    n_nodes = sources[0].n
    m = len(sources) - 1
    zero = ThetaProfile.zeros(cone, n_nodes)
    w: List[ThetaProfile] = [zero] * (m + 3)

    near = abs(math.sin(gamma * cone.angle)) < NEAR_RESONANCE
    n_res = resonant_mode(gamma, cone)
    if n_res is None and near:
        warnings.warn("gamma is near resonance; treating it as resonant", RuntimeWarning, stacklevel=2)
        n_res = int(round(gamma * cone.mu))

    if n_res is None:
        for j in range(m, -1, -1):
            g = sources[j] + 2.0 * (j + 1) * gamma * w[j + 1] - float((j + 2) * (j + 1)) * w[j + 2]
            w[j] = theta_bvp(gamma, g)
        return w[: m + 2]

    phi = ThetaProfile.sine(cone, n_res, n_nodes)
    phi_sq = phi.inner(phi)
    scale = max(max(s.sup() for s in sources), 1e-300)
    p_next = zero  # orthogonal part of w_{j+1}
    for j in range(m, -1, -1):
        g_known = sources[j] + 2.0 * (j + 1) * gamma * p_next - float((j + 2) * (j + 1)) * w[j + 2]
        a_next = -g_known.inner(phi) / (2.0 * gamma * (j + 1) * phi_sq)
        w[j + 1] = p_next + a_next * phi
        p_j, lam = _bordered_solve(gamma, g_known + 2.0 * gamma * (j + 1) * a_next * phi, phi)
        if abs(lam) > lift_tol * scale:
            raise LiftError(f"resonant component of norm {abs(lam):.3e} left unresolved at power t^{j}")
        p_next = p_j
    w[0] = p_next
    return w[: m + 2]


def lift_residual(gamma: float, w: Sequence[ThetaProfile], sources: Sequence[ThetaProfile]) -> float:
    """Largest interior collocation residual of the matched-power system."""
    zero = ThetaProfile.zeros(w[0].cone, w[0].n)
    ext = list(w) + [zero, zero]
    worst = 0.0
    for j in range(len(w)):
        h = sources[j] if j < len(sources) else zero
        r = (ext[j].derivative(2).values + gamma * gamma * ext[j].values
             - 2.0 * (j + 1) * gamma * ext[j + 1].values
             + (j + 2) * (j + 1) * ext[j + 2].values - h.values)
        worst = max(worst, float(np.abs(r[1:-1]).max()))
    return worst


def orthonormal_basis(cone: ConeGeometry, i: int) -> Callable:
    """phi_i(theta) = sqrt(2/(mu pi)) sin(i theta / mu)."""
    scale = math.sqrt(2.0 / cone.angle)
    return lambda theta: scale * sin_pi(i * np.asarray(theta, dtype=float) / cone.angle)
