"""Corner asymptotics read off strip fields: projections, decay fits, barriers."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid
from scipy.optimize import minimize_scalar

from .cone import ConeGeometry, HarmonicMode, Regime, StripField
from .expansion import Expansion, evaluate
from .ledger import ExponentLedger, holder_label

NOISE_FLOOR = 1e-12
DEFAULT_WINDOW = (1.5, 3.5)


class FitError(ValueError):
    pass


def _sign_label(value: float, stderr: float) -> str:
    if abs(value) <= 3.0 * stderr or value == 0.0:
        return "zero"
    return "negative" if value < 0 else "positive"


@dataclass(frozen=True)
class FitReport:
    mode: int
    window: Tuple[float, float]
    exponent_hat: float
    exponent_stderr: float
    amplitude_hat: float
    amplitude_stderr: float
    predicted_exponent: float
    relative_gap: float
    c10_sign: str
    holder: Optional[Tuple[int, float]]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        d["holder"] = None if self.holder is None else list(self.holder)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def mode_projection(field: StripField, i: int) -> np.ndarray:
    """w_i(t) = int_0^{mu pi} v(t, theta) phi_i(theta) dtheta for each t-row.

    Trapezoid on the uniform theta grid; for integrands vanishing at both
    ends with odd derivatives vanishing there too (products of the sine
    basis) this is spectrally accurate.
    """
    if i < 1:
        raise ValueError("mode index must be >= 1")
    cone = field.cone
    phi = math.sqrt(2.0 / cone.angle) * np.sin(i * field.theta / cone.mu)
    phi[0] = 0.0
    phi[-1] = 0.0
    return trapezoid(field.values * phi[None, :], field.theta, axis=1)


def _window_mask(t: np.ndarray, window: Sequence[float]) -> np.ndarray:
    t0, t1 = window
    if t1 - t0 < 1.0 - 1e-12:
        raise FitError(f"fit window [{t0}, {t1}] is shorter than 1")
    if t0 < t[0] - 1e-12 or t1 > t[-1] + 1e-12:
        raise FitError(f"fit window [{t0}, {t1}] not inside the field range [{t[0]}, {t[-1]}]")
    tol = 1e-9 * max(1.0, abs(t1))
    return (t >= t0 - tol) & (t <= t1 + tol)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    rate_stderr: float
    log_amplitude: float
    log_amplitude_stderr: float
    power: float = 0.0
    power_stderr: float = 0.0


def fit_decay(t, y, log_power: bool = False) -> DecayFit:
    """Least-squares fit of ln|y| = a - rate t (+ p ln t when ``log_power``)."""
    t = np.asarray(t, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if np.any(y <= 0):
        raise FitError("cannot fit the logarithm of a vanishing signal")
    ly = np.log(y)
    if not log_power:
        res = stats.linregress(t, ly)
        return DecayFit(-res.slope, res.stderr, res.intercept, res.intercept_stderr)
    M = np.stack([np.ones_like(t), np.log(t), -t], axis=1)
    coef, *_ = np.linalg.lstsq(M, ly, rcond=None)
    resid = ly - M @ coef
    dof = max(len(t) - 3, 1)
    cov = (resid @ resid / dof) * np.linalg.inv(M.T @ M)
    err = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return DecayFit(coef[2], err[2], coef[0], err[0], coef[1], err[1])


def fit_polynomial_decay(t, y, degree: int, search: Tuple[float, float] = (0.1, 10.0),
                         n_grid: int = 3000) -> float:
    """Rate rho of the best fit y ~ e^{-rho t} P(t) with deg P = ``degree``.

    Variable projection: for each rho the polynomial is a linear least-squares
    fit to y e^{rho t} (normalised); rho is located on a log grid and refined
    with a bounded scalar search.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    s = t - t[0]
    V = np.vander(s / s[-1], degree + 1)

    def misfit(rho):
        z = y * np.exp(rho * s)
        z = z / np.linalg.norm(z)
        c, *_ = np.linalg.lstsq(V, z, rcond=None)
        return float(np.linalg.norm(V @ c - z))

    grid = np.geomspace(*search, n_grid)
    k = int(np.argmin([misfit(r) for r in grid]))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)]
    return float(minimize_scalar(misfit, bounds=(lo, hi), method="bounded",
                                 options={"xatol": 1e-12}).x)


def fit_power(t, y, rate: float) -> float:
    """Exponent p of the best fit |y| e^{rate t} ~ A t^p."""
    t = np.asarray(t, dtype=float)
    return float(np.polyfit(np.log(t), np.log(np.abs(y)) + rate * t, 1)[0])


def fit_leading(field: StripField, ledger: ExponentLedger, window: Sequence[float] = DEFAULT_WINDOW,
                noise_floor: float = NOISE_FLOOR) -> FitReport:
    """Log-linear fit of the mode-1 projection over ``window``."""
    t = field.t
    mask = _window_mask(t, window)
    w1 = mode_projection(field, 1)[mask]
    if np.any(np.abs(w1) < noise_floor):
        raise FitError("window below noise floor")
    signs = np.sign(w1)
    if np.any(signs != signs[0]):
        raise FitError("no stable sign of the mode-1 projection in the window")
    fit = fit_decay(t[mask], w1)
    scale = math.sqrt(ledger.cone.angle / 2.0)
    amp = signs[0] * math.exp(fit.log_amplitude) / scale
    amp_err = abs(amp) * fit.log_amplitude_stderr
    predicted = ledger[0].value
    holder = None
    if ledger.cone.regime is Regime.SHARP:
        lab = holder_label(ledger.cone)
        holder = (lab.k, lab.alpha)
    return FitReport(
        mode=1, window=(float(window[0]), float(window[1])),
        exponent_hat=fit.rate, exponent_stderr=fit.rate_stderr,
        amplitude_hat=amp, amplitude_stderr=amp_err,
        predicted_exponent=predicted, relative_gap=abs(fit.rate - predicted) / predicted,
        c10_sign=_sign_label(amp, amp_err), holder=holder,
    )


def mode_exponents(ledger: ExponentLedger, mode: int, upto: Optional[float] = None) -> List[float]:
    """Ledger exponents whose terms can project onto mode ``mode``.

    Entries only in {i/mu} carry a pure sin(i theta/mu) profile and are
    orthogonal to every other mode.
    """
    out = []
    for e in ledger:
        if upto is not None and e.value > upto + 1e-12:
            break
        if e.in_I2 or e.in_I1 == mode:
            out.append(e.value)
    return out


@dataclass(frozen=True)
class AmplitudeFit:
    exponents: Tuple[float, ...]
    amplitudes: Tuple[float, ...]   # coefficients of e^{-gamma t} in the projection
    stderr: Tuple[float, ...]
    mode: int
    window: Tuple[float, float]

    def sine_coefficient(self, cone: ConeGeometry, k: int = 0) -> Tuple[float, float]:
        """Coefficient of exponent k as a multiple of sin(mode theta/mu), with stderr."""
        s = math.sqrt(cone.angle / 2.0)
        return self.amplitudes[k] / s, self.stderr[k] / s


def fit_amplitudes(field: StripField, exponents: Sequence[float], window: Sequence[float],
                   mode: int = 1) -> AmplitudeFit:
    """Linear least squares of the mode projection on {e^{-gamma t}} with pinned rates."""
    t = field.t
    mask = _window_mask(t, window)
    tw = t[mask]
    y = mode_projection(field, mode)[mask]
    if len(tw) <= len(exponents):
        raise FitError("not enough samples in the window for the requested exponents")
    # columns scaled to unit value at the window start for conditioning
    M = np.stack([np.exp(-g * (tw - tw[0])) for g in exponents], axis=1)
    coef, *_ = np.linalg.lstsq(M, y, rcond=None)
    resid = y - M @ coef
    dof = max(len(tw) - len(exponents), 1)
    cov = (resid @ resid / dof) * np.linalg.pinv(M.T @ M)
    err = np.sqrt(np.maximum(np.diag(cov), 0.0))
    back = np.array([math.exp(g * tw[0]) for g in exponents])
    return AmplitudeFit(tuple(float(g) for g in exponents), tuple(coef * back), tuple(err * back),
                        mode, (float(window[0]), float(window[1])))


def sup_residual(field: StripField, model: Optional[StripField] = None) -> np.ndarray:
    vals = field.values if model is None else field.values - model.values
    return np.max(np.abs(vals), axis=1)


@dataclass(frozen=True)
class SlopeReport:
    slope: Optional[float]           # None when the signal sits at the floor
    stderr: float
    window: Tuple[float, float]      # portion actually fitted
    floor_hit: bool
    max_residual: float

    @property
    def label(self):
        return "floor" if self.slope is None else self.slope


def residual_slope(t: np.ndarray, sup: np.ndarray, window: Sequence[float],
                   noise_floor: float = NOISE_FLOOR, min_length: float = 1.0) -> SlopeReport:
    """Decay slope of a sup-residual over the longest initial part of ``window``
    above ``noise_floor``; the slope is None when that part is shorter than
    ``min_length``."""
    mask = _window_mask(t, window)
    tw, sw = t[mask], sup[mask]
    above = sw > noise_floor
    n = len(sw) if np.all(above) else int(np.argmin(above))
    floor_hit = n < len(sw)
    top = float(np.max(sw)) if len(sw) else 0.0
    if n < 3 or tw[n - 1] - tw[0] < min_length - 1e-12:
        return SlopeReport(None, 0.0, (float(tw[0]), float(tw[max(n - 1, 0)])), True, top)
    fit = fit_decay(tw[:n], sw[:n])
    return SlopeReport(fit.rate, fit.rate_stderr, (float(tw[0]), float(tw[n - 1])), floor_hit, top)


@dataclass(frozen=True)
class CascadeStage:
    stage: int
    truncation: float
    slope: Optional[float]
    stderr: float
    max_residual: float

    def to_dict(self) -> dict:
        return {"stage": self.stage, "truncation": self.truncation,
                "slope": "floor" if self.slope is None else self.slope,
                "stderr": self.stderr, "max_residual": self.max_residual}


def residual_cascade(field: StripField, expansion: Expansion, window: Sequence[float] = DEFAULT_WINDOW,
                     noise_floor: float = NOISE_FLOOR, stages: Optional[int] = None) -> List[CascadeStage]:
    """Decay slope of sup_theta |field - (expansion truncated to m exponents)| for m = 1, 2, ..."""
    n_exp = len(expansion.exponents())
    stages = n_exp if stages is None else min(stages, n_exp)
    res = (len(field.t), len(field.theta))
    window_full = field.t_range
    out = []
    for m in range(1, stages + 1):
        part = expansion.truncated(m)
        model = evaluate(part, window_full, res)
        rep = residual_slope(field.t, sup_residual(field, model), window, noise_floor)
        out.append(CascadeStage(m, part.truncation, rep.slope, rep.stderr, rep.max_residual))
    return out


def cascade_monotone(stages: Sequence[CascadeStage], slack: float = 0.0) -> bool:
    """Slopes nondecreasing in the stage; a floor counts as +infinity."""
    vals = [math.inf if s.slope is None else s.slope for s in stages]
    return all(b >= a - slack for a, b in zip(vals, vals[1:]))


@dataclass(frozen=True)
class BarrierReport:
    passed: bool
    eps: float
    max_violation: float
    max_eps: float
    boundary_nonpositive: bool
    region: Tuple[float, float]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["region"] = list(self.region)
        return d


def barrier_check(field: StripField, eps: float, region: Optional[Sequence[float]] = None,
                  tol: float = 0.0) -> BarrierReport:
    """Check v + eps h <= tol on the annular sector ``region`` (a t-window),
    with h = r^{1/mu} sin(theta/mu).

    The largest admissible eps is min(-v/h) over nodes with h > 0, which is
    what a bisection on eps would converge to.
    """
    cone = field.cone
    t = field.t
    if region is None:
        region = field.t_range
    t0, t1 = region
    if t0 < t[0] - 1e-12 or t1 > t[-1] + 1e-12 or t1 <= t0:
        raise ValueError("region not contained in the sampled set")
    mask = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    v = field.values[mask]
    h = HarmonicMode(1, cone).strip(t[mask][:, None], field.theta[None, :])
    excess = v + eps * h
    worst = float(np.max(excess))
    pos = h > 0
    max_eps = float(np.min(-v[pos] / h[pos])) if np.any(pos) else math.inf
    edge = np.concatenate([v[0], v[-1], v[:, 0], v[:, -1]])
    return BarrierReport(worst <= tol, float(eps), max(worst, 0.0), max_eps,
                         bool(np.all(edge <= tol)), (float(t0), float(t1)))


def gnuplot_script(report: FitReport, data_file: str) -> str:
    """Standalone gnuplot script: ln|w_1| against t with the fitted line."""
    a = math.log(abs(report.amplitude_hat) * math.sqrt(math.pi / 2.0)) if report.amplitude_hat else 0.0
    return "\n".join([
        "# ln|w_1(t)| with the fitted decay line",
        "set xlabel 't'",
        "set ylabel 'ln|w_1|'",
        "set key top right",
        "set datafile separator ','",
        f"t0 = {report.window[0]!r}",
        f"t1 = {report.window[1]!r}",
        f"rate = {report.exponent_hat!r}",
        f"mu = {1.0 / report.predicted_exponent!r}",
        f"lnA = {a!r} + 0.5 * log(mu)",
        "fit_at(t) = lnA - rate * t",
        "set arrow from t0, graph 0 to t0, graph 1 nohead dt 2",
        "set arrow from t1, graph 0 to t1, graph 1 nohead dt 2",
        f"plot '{data_file}' using 1:(log(abs($2))) every ::1 with lines title 'ln|w_1|', \\",
        "     fit_at(x) title sprintf('fit, rate %.4f', rate)",
        "pause -1",
        "",
    ])
