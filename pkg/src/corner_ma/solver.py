"""Damped Newton finite differences for det D^2 u = f with Dirichlet data.

Unknowns are stored as a correction w to a background quadratic q whose
Hessian is exact (q = the boundary data when that is a quadratic, otherwise
|x|^2/2), so u = q + w.  Second differences use the standard three-point
rules on a tensor grid that may be geometrically graded toward the origin
corner; the mixed derivative is the product of centred first differences
(the usual nine-point stencil).  All rules are exact on quadratics.

Parallelograms are handled as images B([0,a]x[0,b]) of a rectangle: with
U = u o B the equation becomes det D^2 U = (det B)^2 f o B.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RectBivariateSpline

from .cone import AffineMap2, Quadratic

log = logging.getLogger(__name__)

MAX_GRADING = 1.05


class SolverError(RuntimeError):
    pass


class SolverStagnation(SolverError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def graded_nodes(length: float, n: int, ratio: float = 1.0, max_stretch: float = 16.0) -> np.ndarray:
    """Nodes on [0, length] whose cells grow by ``ratio`` away from 0 until
    they are ``max_stretch`` times the first cell, then stay constant."""
    if n < 2:
        raise ValueError("need at least two nodes")
    if ratio == 1.0:
        return np.linspace(0.0, length, n)
    cells = n - 1
    cap = int(math.floor(math.log(max_stretch) / math.log(ratio))) if max_stretch > 1 else 0
    k = np.arange(cells)
    sizes = ratio ** np.minimum(k, cap)
    x = np.concatenate([[0.0], np.cumsum(sizes)])
    x *= length / x[-1]
    x[-1] = length
    return x


def _stencils(x: np.ndarray):
    """Interior coefficients (minus, centre, plus) of d2/dx2 and d/dx."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    d2 = (2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp)))
    den = hm * hp * (hm + hp)
    d1 = (-hp * hp / den, (hp * hp - hm * hm) / den, hm * hm / den)
    return d2, d1


def _tri(coefs, n: int) -> sp.csr_matrix:
    """Interior-to-interior block of a three-point operator on n nodes."""
    m, c, p = coefs
    return sp.diags([m[1:], c, p[:-1]], [-1, 0, 1], shape=(n - 2, n - 2), format="csr")


@dataclass(frozen=True)
class ProblemSpec:
    """det D^2 u = f on B([0,width] x [0,height]) with u = boundary on the edge.

    ``f`` may be a positive constant, an (n, n) grid array, or a callable of
    physical coordinates (x, y).  ``shape`` is the linear map B (identity for
    rectangles).  ``grading`` > 1 refines geometrically toward the corner at
    the origin.
    """
    f: Union[float, np.ndarray, Callable] = 1.0
    boundary: Optional[Union[Quadratic, Callable]] = None
    n: int = 129
    width: float = 1.0
    height: float = 1.0
    shape: Optional[AffineMap2] = None
    grading: float = 1.0
    max_stretch: float = 16.0

    def __post_init__(self):
        if self.n < 17:
            raise ValueError(f"grid must have at least 17 nodes per side, got {self.n}")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("domain sides must be positive")
        if not 1.0 <= self.grading <= MAX_GRADING:
            raise ValueError(f"grading ratio must lie in [1, {MAX_GRADING}]")
        if self.max_stretch < 1.0:
            raise ValueError("max_stretch must be >= 1")
        if np.isscalar(self.f) and not float(self.f) > 0:
            raise ValueError("f must be positive")

    @property
    def map(self) -> AffineMap2:
        return self.shape if self.shape is not None else AffineMap2.identity()

    def nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        return (graded_nodes(self.width, self.n, self.grading, self.max_stretch),
                graded_nodes(self.height, self.n, self.grading, self.max_stretch))

    def physical(self, xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = self.map(np.stack([X.ravel(), Y.ravel()], axis=1))
        return pts[:, 0].reshape(X.shape), pts[:, 1].reshape(X.shape)

    def f_grid(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        if callable(self.f):
            vals = np.asarray(self.f(px, py), dtype=float) * np.ones_like(px)
        elif np.isscalar(self.f):
            vals = np.full(px.shape, float(self.f))
        else:
            vals = np.asarray(self.f, dtype=float)
            if vals.shape != px.shape:
                raise ValueError(f"f grid has shape {vals.shape}, expected {px.shape}")
        if not np.all(vals > 0):
            raise ValueError("f must be positive everywhere")
        return vals

    def background(self) -> Quadratic:
        """Background quadratic in physical coordinates."""
        if isinstance(self.boundary, Quadratic):
            return self.boundary
        return Quadratic(np.eye(2))

    def boundary_values(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        phi = self.boundary if self.boundary is not None else Quadratic(np.eye(2))
        if isinstance(phi, Quadratic):
            return phi(px, py)
        return np.asarray(phi(px, py), dtype=float) * np.ones_like(px)


@dataclass(frozen=True, eq=False)
class MASolution:
    spec: ProblemSpec
    x: np.ndarray            # reference-rectangle nodes
    y: np.ndarray
    w: np.ndarray            # correction to the background on the reference grid
    background: Quadratic    # background in reference coordinates
    residual_sup: float
    newton_iters: int
    convex_certificate: bool
    history: Tuple[Tuple[int, float, float], ...] = ()
    start: str = "poisson"

    @property
    def u(self) -> np.ndarray:
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return self.background(X, Y) + self.w

    def physical_nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.spec.physical(self.x, self.y)

    def _spline(self) -> RectBivariateSpline:
        return RectBivariateSpline(self.x, self.y, self.w, kx=3, ky=3, s=0)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """u at physical points by bicubic interpolation; NaN outside the domain."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ref = self.spec.map.apply_inverse(pts)
        slack = 1e-12 * max(self.spec.width, self.spec.height)
        inside = ((ref[:, 0] >= -slack) & (ref[:, 0] <= self.spec.width + slack)
                  & (ref[:, 1] >= -slack) & (ref[:, 1] <= self.spec.height + slack))
        out = np.full(len(pts), np.nan)
        if np.any(inside):
            r = ref[inside]
            rx = np.clip(r[:, 0], 0.0, self.spec.width)
            ry = np.clip(r[:, 1], 0.0, self.spec.height)
            out[inside] = self.background(rx, ry) + self._spline().ev(rx, ry)
        return out

    def to_csv(self) -> str:
        px, py = self.physical_nodes()
        u = self.u
        buf = io.StringIO()
        buf.write("x,y,u\n")
        for a, b, c in zip(px.ravel(), py.ravel(), u.ravel()):
            buf.write(f"{a:.17g},{b:.17g},{c:.17g}\n")
        return buf.getvalue()

    def log_csv(self) -> str:
        lines = ["iter,residual,step"]
        lines += [f"{i},{r:.17g},{s:.17g}" for i, r, s in self.history]
        return "\n".join(lines) + "\n"


class _Discretisation:
    def __init__(self, x: np.ndarray, y: np.ndarray, hess: np.ndarray):
        self.x, self.y = x, y
        self.nx, self.ny = len(x), len(y)
        self.hess = hess
        self.d2x, self.d1x = _stencils(x)
        self.d2y, self.d1y = _stencils(y)
        self.Dxx = sp.kron(_tri(self.d2x, self.nx), sp.identity(self.ny - 2), format="csr")
        self.Dyy = sp.kron(sp.identity(self.nx - 2), _tri(self.d2y, self.ny), format="csr")
        self.Dxy = sp.kron(_tri(self.d1x, self.nx), _tri(self.d1y, self.ny), format="csr")

    @staticmethod
    def _apply_x(c, w):
        m, o, p = c
        return m[:, None] * w[:-2] + o[:, None] * w[1:-1] + p[:, None] * w[2:]

    @staticmethod
    def _apply_y(c, w):
        m, o, p = c
        return m[None, :] * w[:, :-2] + o[None, :] * w[:, 1:-1] + p[None, :] * w[:, 2:]

    def second_derivatives(self, w: np.ndarray):
        """Interior (uxx, uyy, uxy) of u = background + w."""
        H = self.hess
        wxx = self._apply_x(self.d2x, w)[:, 1:-1]
        wyy = self._apply_y(self.d2y, w)[1:-1, :]
        wxy = self._apply_y(self.d1y, self._apply_x(self.d1x, w))
        return H[0, 0] + wxx, H[1, 1] + wyy, H[0, 1] + wxy

    def residual(self, w: np.ndarray, f: np.ndarray):
        uxx, uyy, uxy = self.second_derivatives(w)
        return uxx * uyy - uxy * uxy - f, (uxx, uyy, uxy)

    def jacobian(self, uxx, uyy, uxy) -> sp.csr_matrix:
        return (sp.diags(uyy.ravel()) @ self.Dxx + sp.diags(uxx.ravel()) @ self.Dyy
                - 2.0 * sp.diags(uxy.ravel()) @ self.Dxy).tocsc()

    def laplacian(self) -> sp.csc_matrix:
        return (self.Dxx + self.Dyy).tocsc()

    def boundary_laplacian(self, w: np.ndarray) -> np.ndarray:
        """Laplacian of w with its interior values zeroed (boundary contribution)."""
        wb = w.copy()
        wb[1:-1, 1:-1] = 0.0
        return (self._apply_x(self.d2x, wb)[:, 1:-1] + self._apply_y(self.d2y, wb)[1:-1, :])


def _convex(uxx, uyy, uxy) -> bool:
    return bool(np.all(uxx > 0) and np.all(uyy > 0) and np.all(uxx * uyy - uxy * uxy > 0))


def _roundoff_floor(w, q, disc, derivs) -> float:
    """Rough size of the rounding error in the discrete determinant."""
    X, Y = np.meshgrid(disc.x, disc.y, indexing="ij")
    u = np.abs(q(X, Y) + w).max()
    h = min(np.diff(disc.x).min(), np.diff(disc.y).min())
    scale = max(np.abs(derivs[0]).max(), np.abs(derivs[1]).max())
    return 8.0 * np.finfo(float).eps * u / (h * h) * scale


def solve_dirichlet(spec: ProblemSpec, tol: float = 1e-10, max_iters: int = 50,
                    min_step: float = 2.0 ** -20) -> MASolution:
    """Damped Newton solve; raises :class:`SolverStagnation` when no step helps."""
    B = spec.map
    xs, ys = spec.nodes()
    px, py = spec.physical(xs, ys)
    f = spec.f_grid(px, py)[1:-1, 1:-1] * B.determinant ** 2
    q_phys = spec.background()
    q = q_phys.compose(B)
    X, Y = np.meshgrid(xs, ys, indexing="ij")

    w_bnd = spec.boundary_values(px, py) - q(X, Y)
    w_bnd[1:-1, 1:-1] = 0.0
    disc = _Discretisation(xs, ys, q.hessian)

    # two starting candidates: the boundary extension and a Poisson solve
    cands = [("boundary", w_bnd.copy())]
    rhs = 2.0 * np.sqrt(f) - np.trace(q.hessian) - disc.boundary_laplacian(w_bnd)
    w_p = w_bnd.copy()
    w_p[1:-1, 1:-1] = spla.spsolve(disc.laplacian(), rhs.ravel()).reshape(rhs.shape)
    cands.append(("poisson", w_p))
    scored = []
    for name, w0 in cands:
        r0, d0 = disc.residual(w0, f)
        scored.append((np.max(np.abs(r0)), name, w0, r0, d0))
    scored.sort(key=lambda s: (s[0], s[1] != "poisson"))
    res, start, w, r, derivs = scored[0]
    history: List[Tuple[int, float, float]] = [(0, float(res), 0.0)]
    log.debug("start %s residual %.3e", start, res)

    iters = 0
    convex_now = _convex(*derivs)
    while res >= tol:
        if iters >= max_iters:
            raise SolverStagnation(f"no convergence in {max_iters} Newton iterations", res)
        J = disc.jacobian(*derivs)
        delta = spla.spsolve(J, -r.ravel()).reshape(r.shape)
        iters += 1
        step = 1.0
        while True:
            trial = w.copy()
            trial[1:-1, 1:-1] += step * delta
            r_t, d_t = disc.residual(trial, f)
            res_t = float(np.max(np.abs(r_t)))
            # once the iterate is convex it must stay convex
            convex_t = _convex(*d_t)
            if res_t < res and (convex_t or not convex_now):
                break
            step *= 0.5
            if step < min_step:
                raise SolverStagnation("line search failed to reduce the residual; roundoff floor "
                                       f"about {_roundoff_floor(w, q, disc, derivs):.1e}", res)
        w, r, derivs, res, convex_now = trial, r_t, d_t, res_t, convex_t
        history.append((iters, res, step))
        log.debug("newton %d residual %.3e step %.3g", iters, res, step)

    convex = _convex(*derivs)
    if not convex:
        log.warning("converged iterate is not discretely convex")
    return MASolution(spec, xs, ys, w, q, float(res), iters, convex, tuple(history), start)


def pullback(sol: MASolution, A: AffineMap2, targets) -> np.ndarray:
    """Values of u o A at ``targets``; points mapped outside the domain give NaN."""
    pts = np.atleast_2d(np.asarray(targets, dtype=float))
    return sol.evaluate(A(pts))
