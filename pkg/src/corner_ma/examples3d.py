"""Closed-form checks for two three-dimensional obstructions.

Edge compatibility: along an edge where the boundary forces u11 = u22 = u33 = 1
and the other off-diagonal entries vanish, det D^2 u = f fixes the mixed
entry to m = -sqrt(1 - f) (the sign follows continuity from the vertex of
P = |x|^2/2 - x1 x2/2, where f = 3/4 and m = -1/2).

Sector barrier: in the planar sector of opening 2 pi/3, h = r^{3/2} sin(3 theta/2)
is harmonic with |grad h|^2 = (9/4) r, so v = h^{5/4} has
Lap v = (45/64) r^{-1/8} sin(3 theta/2)^{-3/4}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

SECTOR = 2.0 * math.pi / 3.0
FD_STEP = 1e-3
EDGE_MIN = 1e-6


def hessian_template(m: float) -> np.ndarray:
    return np.array([[1.0, m, 0.0], [m, 1.0, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class EdgeComputation:
    f_value: float
    mixed_derivative: float

    @property
    def determinant(self) -> float:
        m = self.mixed_derivative
        return 1.0 - m * m

    @property
    def defect(self) -> float:
        return self.determinant - self.f_value


def edge_mixed_derivative(f_value: float) -> float:
    """Negative root m of det [[1, m, 0], [m, 1, 0], [0, 0, 1]] = f_value."""
    if f_value <= 0:
        raise ValueError("f_value must be positive")
    if f_value > 1:
        raise ValueError("no real root: f_value exceeds 1")
    return -math.sqrt(1.0 - f_value)


def edge_computation(f_value: float) -> EdgeComputation:
    return EdgeComputation(f_value, edge_mixed_derivative(f_value))


def _check_angle(theta: float) -> None:
    if not 0.0 < theta < SECTOR:
        raise ValueError("edge singularity: theta must lie strictly inside (0, 2 pi/3)")


def barrier_values(r: float, theta: float) -> Tuple[float, float, float]:
    """(h, v, Lap v) at polar point (r, theta) from the closed forms."""
    if r <= 0:
        raise ValueError("r must be positive")
    _check_angle(theta)
    s = math.sin(1.5 * theta)
    h = r ** 1.5 * s
    return h, h ** 1.25, (45.0 / 64.0) * r ** -0.125 * s ** -0.75


def h_cartesian(x, y):
    r = np.hypot(x, y)
    th = np.arctan2(y, x)
    return r ** 1.5 * np.sin(1.5 * th)


def v_cartesian(x, y, z=0.0):
    """h^{5/4}, independent of the third coordinate."""
    return h_cartesian(x, y) ** 1.25


def fd_laplacian(func: Callable, x: float, y: float, step: float = FD_STEP) -> float:
    """Five-point Laplacian of a planar function."""
    c = func(x, y)
    return float((func(x + step, y) + func(x - step, y) + func(x, y + step) + func(x, y - step) - 4 * c)
                 / step ** 2)


def fd_gradient_sq(func: Callable, x: float, y: float, step: float = FD_STEP) -> float:
    gx = (func(x + step, y) - func(x - step, y)) / (2 * step)
    gy = (func(x, y + step) - func(x, y - step)) / (2 * step)
    return float(gx * gx + gy * gy)


def fd_hessian3(func: Callable, p: Sequence[float], step: float = FD_STEP) -> np.ndarray:
    """Central-difference Hessian of a function of three variables."""
    p = np.asarray(p, dtype=float)
    H = np.zeros((3, 3))
    e = np.eye(3) * step
    f0 = func(*p)
    for i in range(3):
        H[i, i] = (func(*(p + e[i])) - 2 * f0 + func(*(p - e[i]))) / step ** 2
        for j in range(i + 1, 3):
            H[i, j] = H[j, i] = (func(*(p + e[i] + e[j])) - func(*(p + e[i] - e[j]))
                                 - func(*(p - e[i] + e[j])) + func(*(p - e[i] - e[j]))) / (4 * step ** 2)
    return H


@dataclass(frozen=True)
class HessianReport:
    r: float
    theta: float
    hessian: np.ndarray
    laplacian: float
    ratio: float        # max |v_ij| / Lap v
    norm_ratio: float   # spectral norm of D^2 v / Lap v; invariant under reflections


def hessian_bound_check(r: float, theta: float, step: float = FD_STEP) -> HessianReport:
    """FD second derivatives of v = h^{5/4} against its closed-form Laplacian."""
    _check_angle(theta)
    gap = r * math.sin(min(theta, SECTOR - theta, math.pi / 2))
    if gap < max(EDGE_MIN, 2.0 * step):
        raise ValueError("point too close to the sector edge for the difference stencil")
    p = (r * math.cos(theta), r * math.sin(theta), 0.0)
    H = fd_hessian3(v_cartesian, p, step)
    lap = barrier_values(r, theta)[2]
    return HessianReport(r, theta, H, lap, float(np.max(np.abs(H)) / lap),
                         float(np.max(np.abs(np.linalg.eigvalsh(H))) / lap))


def hessian_sweep(n_r: int = 20, n_theta: int = 20, r_range=(0.1, 1.0), margin: float = 0.2,
                  step: float = FD_STEP, norm: bool = False) -> np.ndarray:
    """Ratio max|v_ij| / Lap v (or the spectral-norm ratio) on an (n_r, n_theta) polar grid."""
    rs = np.linspace(*r_range, n_r)
    ths = np.linspace(margin, SECTOR - margin, n_theta)
    key = "norm_ratio" if norm else "ratio"
    return np.array([[getattr(hessian_bound_check(r, th, step), key) for th in ths] for r in rs])


def sample_points(n: int, seed: int = 0, r_range=(0.1, 1.0), margin: float = 0.2) -> np.ndarray:
    """``n`` polar points (r, theta) inside the sector, away from the edges."""
    rng = np.random.default_rng(seed)
    return np.stack([rng.uniform(*r_range, n), rng.uniform(margin, SECTOR - margin, n)], axis=1)


def laplacian_errors(points: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Relative error of the FD Laplacian of h^{5/4} against the closed form."""
    out = []
    for r, th in points:
        x, y = r * math.cos(th), r * math.sin(th)
        exact = barrier_values(r, th)[2]
        out.append(abs(fd_laplacian(v_cartesian, x, y, step) - exact) / exact)
    return np.array(out)


def harmonicity_ratio(r: float = 0.5, theta: float = math.pi / 3, step: float = 1e-2) -> Tuple[float, float, float]:
    """FD Laplacian of h at step and step/2, and their ratio (about 4 for O(h^2))."""
    x, y = r * math.cos(theta), r * math.sin(theta)
    a = fd_laplacian(h_cartesian, x, y, step)
    b = fd_laplacian(h_cartesian, x, y, step / 2)
    return a, b, a / b


@dataclass(frozen=True)
class CheckRow:
    name: str
    passed: bool
    detail: str


def verify3d(seed: int = 0, n_points: int = 100) -> List[CheckRow]:
    """Pass/fail table for every checkable formula of the two examples."""
    rows = []
    m = edge_mixed_derivative(0.75)
    rows.append(CheckRow("edge m(3/4) = -1/2", m == -0.5, f"m = {m!r}"))
    worst = max(abs(edge_computation(f).defect) for f in np.linspace(0.01, 1.0, 100))
    rows.append(CheckRow("edge determinant identity", bool(worst < 1e-14), f"max defect {worst:.3e}"))
    h, v, lap = barrier_values(1.0, math.pi / 3)
    rows.append(CheckRow("Lap v at (1, pi/3) = 45/64", abs(lap - 45 / 64) < 1e-15 and h == 1.0 and v == 1.0,
                         f"Lap v = {lap!r}"))
    errs = laplacian_errors(sample_points(n_points, seed))
    rows.append(CheckRow("FD Lap h^(5/4) vs closed form", bool(errs.max() < 1e-3),
                         f"max rel error {errs.max():.3e} at {n_points} points"))
    a, b, ratio = harmonicity_ratio()
    rows.append(CheckRow("FD harmonicity of h is O(h^2)", bool(3.2 <= ratio <= 4.8),
                         f"Lap_h h = {a:.3e}, {b:.3e}; ratio {ratio:.3f}"))
    pts = sample_points(20, seed + 1)
    gerr = max(abs(fd_gradient_sq(h_cartesian, r * math.cos(t), r * math.sin(t), 1e-4) - 2.25 * r) / (2.25 * r)
               for r, t in pts)
    rows.append(CheckRow("|grad h|^2 = (9/4) r", bool(gerr < 1e-6), f"max rel error {gerr:.3e}"))
    sweep = hessian_sweep()
    rows.append(CheckRow("max |v_ij| / Lap v finite on sweep", bool(np.all(np.isfinite(sweep))),
                         f"max ratio {sweep.max():.4f} over {sweep.size} points"))
    return rows
