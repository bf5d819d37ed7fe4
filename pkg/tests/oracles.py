"""Independent reference computations used by the tests.

Nothing here calls into corner_ma: exponent sets are enumerated with plain
fractions, derivatives come from sympy, determinants from Cartesian finite
differences.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import sympy as sp

X, Y = sp.symbols("x y", real=True)
T, TH = sp.symbols("t theta", real=True)


def brute_force_exponents(mu: Fraction, cutoff: float, sharp: bool):
    """Sorted distinct values of {i/mu} and the quadratic set up to cutoff (exact)."""
    inv = 1 / mu
    vals = set()
    i = 1
    while i * inv <= cutoff:
        vals.add(i * inv)
        i += 1
    step = inv - 2 if sharp else 2 * (inv - 1)
    i0 = 1 if sharp else 2
    for i in range(i0, 200):
        for j in range(1, 200):
            v = step * j + i * inv
            if v <= cutoff:
                vals.add(v)
    return sorted(vals)


def brute_force_float(mu: float, cutoff: float):
    inv = 1.0 / mu
    vals = []
    i = 1
    while i * inv <= cutoff + 1e-12:
        vals.append(i * inv)
        i += 1
    sharp = mu < 0.5
    step = inv - 2 if sharp else 2 * (inv - 1)
    for i in range(1 if sharp else 2, 200):
        for j in range(1, 400):
            v = step * j + i * inv
            if v <= cutoff + 1e-12:
                vals.append(v)
    vals.sort()
    out = []
    for v in vals:
        if not out or v - out[-1] > 1e-9:
            out.append(v)
    return out


def strip_expression(expr):
    """v(x, y) rewritten as v~(t, theta) with x = e^{-t} cos theta, y = e^{-t} sin theta."""
    return expr.subs({X: sp.exp(-T) * sp.cos(TH), Y: sp.exp(-T) * sp.sin(TH)})


def strip_derivatives(expr):
    """Callables (v_t, v_th, v_tt, v_tth, v_thth) of the strip form of v(x, y)."""
    s = strip_expression(expr)
    ds = [sp.diff(s, T), sp.diff(s, TH), sp.diff(s, T, 2), sp.diff(s, T, TH), sp.diff(s, TH, 2)]
    return [sp.lambdify((T, TH), d, "numpy") for d in ds]


def cartesian_det(expr):
    h = sp.hessian(expr, (X, Y))
    return sp.lambdify((X, Y), sp.simplify(h.det()), "numpy")


def fd_det(func, x, y, h):
    """Nine-point finite-difference det D^2 of a planar function."""
    fxx = (func(x + h, y) - 2 * func(x, y) + func(x - h, y)) / h ** 2
    fyy = (func(x, y + h) - 2 * func(x, y) + func(x, y - h)) / h ** 2
    fxy = (func(x + h, y + h) - func(x + h, y - h) - func(x - h, y + h) + func(x - h, y - h)) / (4 * h ** 2)
    return fxx * fyy - fxy ** 2


def fd_laplacian(func, x, y, h):
    return (func(x + h, y) + func(x - h, y) + func(x, y + h) + func(x, y - h) - 4 * func(x, y)) / h ** 2


def c20_closed_form(theta, mu, c1):
    """Solution of w'' + g^2 w = K, w(0) = w(mu pi) = 0, for the second exponent of a sharp cone."""
    a = 1.0 / mu
    g = 2.0 * a - 2.0
    K = c1 ** 2 * a ** 2 * (a - 1) ** 2
    L = mu * math.pi
    return K / g ** 2 * (1 - np.cos(g * theta) - (1 - math.cos(g * L)) / math.sin(g * L) * np.sin(g * theta))
