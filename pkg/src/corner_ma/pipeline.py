"""End-to-end corner study for the unit square with det D^2 u = c, u = |x|^2/2.

Stages: solve -> pull back by the normalising map -> subtract |x|^2/2 ->
strip resampling -> leading fit -> expansion from the fitted amplitude ->
second-order and cascade checks -> barrier.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .analysis import (NOISE_FLOOR, AmplitudeFit, BarrierReport, CascadeStage, FitReport, SlopeReport,
                       barrier_check, cascade_monotone, fit_amplitudes, fit_leading, mode_exponents,
                       residual_cascade, residual_slope, sup_residual)
from .cone import AffineMap2, ConeGeometry, Quadratic, StripField, affine_normalizer, model_quadratic, to_strip
from .expansion import Expansion, build_expansion, evaluate
from .ledger import ExponentLedger, build_ledger, holder_label
from .solver import MASolution, ProblemSpec, pullback, solve_dirichlet

log = logging.getLogger(__name__)

SANDWICH_SLACK = 1e-10


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineSettings:
    c: float
    n: int = 513
    grading: float = 1.05
    max_stretch: float = 16.0
    tol: float = 1e-10
    window: Tuple[float, float] = (1.5, 3.5)
    calibration_window: Tuple[float, float] = (2.5, 5.5)
    strip_window: Tuple[float, float] = (1.0, 6.0)
    strip_resolution: Tuple[int, int] = (201, 129)
    cutoff: Optional[float] = None        # default: fourth ledger exponent
    noise_floor: float = NOISE_FLOOR
    barrier_eps: Optional[float] = None   # default: half the largest admissible eps


@dataclass(frozen=True)
class SandwichReport:
    passed: bool
    min_above_lower: float    # min (u - |x|^2/2) over interior nodes
    min_below_upper: float    # min (P_c^+ - u) over interior nodes
    slack: float

    def to_dict(self) -> dict:
        return {"passed": self.passed, "min_above_lower": self.min_above_lower,
                "min_below_upper": self.min_below_upper, "slack": self.slack}


def sandwich(sol: MASolution, c: float, slack: float = SANDWICH_SLACK) -> SandwichReport:
    """|x|^2/2 < u < P_c^+ at every interior node, up to ``slack``."""
    px, py = sol.physical_nodes()
    u = sol.u
    inner = np.s_[1:-1, 1:-1]
    lower = (u - 0.5 * (px * px + py * py))[inner]
    upper = (model_quadratic(c)(px, py) - u)[inner]
    lo, hi = float(lower.min()), float(upper.min())
    return SandwichReport(lo > -slack and hi > -slack, lo, hi, slack)


@dataclass(frozen=True)
class SecondOrderReport:
    c1: float
    c1_stderr: float
    slope: Optional[float]
    slope_stderr: float
    fitted_window: Tuple[float, float]
    predicted: float
    leading: float
    degraded: bool
    passed: bool

    def to_dict(self) -> dict:
        return {"c1": self.c1, "c1_stderr": self.c1_stderr,
                "slope": "floor" if self.slope is None else self.slope,
                "slope_stderr": self.slope_stderr, "fitted_window": list(self.fitted_window),
                "predicted": self.predicted, "leading": self.leading,
                "mode": "degraded: slope >= mu1 + 0.5 only" if self.degraded else "full",
                "passed": self.passed}


def corner_field(sol: MASolution, A: AffineMap2, cone: ConeGeometry, window, resolution) -> StripField:
    """v = u o A - |x|^2/2 on the strip."""
    def source(points):
        return pullback(sol, A, points) - 0.5 * np.sum(points * points, axis=1)
    return to_strip(source, cone, window, resolution)


def calibrate_leading(field: StripField, ledger: ExponentLedger, window) -> AmplitudeFit:
    """Pinned-rate fit of the mode-1 projection over every mode-1 exponent up to the cutoff."""
    return fit_amplitudes(field, mode_exponents(ledger, 1, upto=ledger.cutoff), window, mode=1)


def second_order_check(field: StripField, ledger: ExponentLedger, c1: float, c1_stderr: float,
                       window, noise_floor: float = NOISE_FLOOR) -> SecondOrderReport:
    """Decay of field - c1 e^{-mu_1 t} sin(theta/mu) against mu_2."""
    cone = field.cone
    mu1, mu2 = ledger[0].value, ledger[1].value
    lead = c1 * np.exp(-mu1 * field.t)[:, None] * np.sin(field.theta / cone.mu)[None, :]
    lead[:, 0] = lead[:, -1] = 0.0
    rep = residual_slope(field.t, sup_residual(field.with_values(field.values - lead)), window, noise_floor)
    degraded = rep.floor_hit
    if rep.slope is None:
        passed = False
    elif degraded:
        passed = rep.slope >= mu1 + 0.5
    else:
        passed = rep.slope >= mu1 + 0.5 and abs(rep.slope - mu2) / mu2 <= 0.20
    return SecondOrderReport(c1, c1_stderr, rep.slope, rep.stderr, rep.window, mu2, mu1, degraded, passed)


def fit_free_coefficients(field: StripField, ledger: ExponentLedger, c1: float, window,
                          upto: float) -> Tuple[Dict[float, float], Expansion]:
    """Leading amplitude plus, at each later resonant exponent, a pinned fit of the
    matching mode of the residual left by the expansion built so far."""
    free = {ledger[0].value: c1}
    res = (len(field.t), len(field.theta))
    for entry in ledger:
        if entry.position == 1 or entry.in_I1 is None or entry.value > upto + 1e-12:
            continue
        prev = build_expansion(ledger, free, upto=ledger[entry.position - 2].value)
        resid = field.with_values(field.values - evaluate(prev, field.t_range, res).values)
        rates = [g for g in mode_exponents(ledger, entry.in_I1, upto=ledger.cutoff) if g >= entry.value - 1e-12]
        fit = fit_amplitudes(resid, rates, window, mode=entry.in_I1)
        free[entry.value] = fit.sine_coefficient(ledger.cone, 0)[0]
    return free, build_expansion(ledger, free, upto=upto)


@dataclass
class PipelineResult:
    settings: PipelineSettings
    cone: ConeGeometry
    A: AffineMap2
    solution: MASolution
    field: StripField
    ledger: ExponentLedger
    fit: FitReport
    calibration: AmplitudeFit
    second_order: SecondOrderReport
    expansion: Expansion
    free_coefficients: Dict[float, float]
    cascade: List[CascadeStage]
    barrier: BarrierReport
    sandwich: SandwichReport
    checks: Dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def summary(self) -> dict:
        lab = holder_label(self.cone)
        return {
            "c": self.settings.c,
            "mu": self.cone.mu,
            "grid": self.settings.n,
            "newton_iters": self.solution.newton_iters,
            "residual_sup": self.solution.residual_sup,
            "convex_certificate": self.solution.convex_certificate,
            "predicted_exponent": self.fit.predicted_exponent,
            "exponent_hat": self.fit.exponent_hat,
            "relative_gap": self.fit.relative_gap,
            "c10_sign": self.fit.c10_sign,
            "holder": [lab.k, lab.alpha],
            "second_order": self.second_order.to_dict(),
            "free_coefficients": {f"{k:.12g}": v for k, v in sorted(self.free_coefficients.items())},
            "cascade": [s.to_dict() for s in self.cascade],
            "barrier": self.barrier.to_dict(),
            "sandwich": self.sandwich.to_dict(),
            "checks": dict(self.checks),
            "passed": self.passed,
        }


def run_corner_pipeline(settings: PipelineSettings, solution: Optional[MASolution] = None) -> PipelineResult:
    s = settings
    try:
        A, cone = affine_normalizer(s.c)
        ledger = build_ledger(cone, s.cutoff if s.cutoff is not None else _default_cutoff(cone))
    except ValueError as exc:
        raise PipelineError("setup", str(exc)) from exc

    if solution is None:
        try:
            solution = solve_dirichlet(ProblemSpec(f=s.c, n=s.n, grading=s.grading, max_stretch=s.max_stretch),
                                       tol=s.tol)
        except (RuntimeError, ValueError) as exc:
            raise PipelineError("solve", str(exc)) from exc
    sand = sandwich(solution, s.c)

    try:
        field_ = corner_field(solution, A, cone, s.strip_window, s.strip_resolution)
    except ValueError as exc:
        raise PipelineError("to_strip", str(exc)) from exc

    try:
        fit = fit_leading(field_, ledger, s.window, s.noise_floor)
        calib = calibrate_leading(field_, ledger, s.calibration_window)
        c1, c1_err = calib.sine_coefficient(cone, 0)
        second = second_order_check(field_, ledger, c1, c1_err, s.window, s.noise_floor)
    except ValueError as exc:
        raise PipelineError("fit", str(exc)) from exc

    try:
        free, expansion = fit_free_coefficients(field_, ledger, c1, s.window, ledger.cutoff)
        cascade = residual_cascade(field_, expansion, s.window, s.noise_floor)
    except (ValueError, RuntimeError) as exc:
        raise PipelineError("expansion", str(exc)) from exc

    try:
        probe = barrier_check(field_, 0.0, s.window)
        eps = s.barrier_eps if s.barrier_eps is not None else 0.5 * probe.max_eps
        barrier = barrier_check(field_, eps, s.window)
    except ValueError as exc:
        raise PipelineError("barrier", str(exc)) from exc

    lab = holder_label(cone)
    checks = {
        "solver_converged": solution.residual_sup < s.tol,
        "convex_certificate": solution.convex_certificate,
        "sandwich": sand.passed,
        "exponent_gap_below_0.10": fit.relative_gap < 0.10,
        "c10_negative": fit.c10_sign == "negative",
        "holder_label": fit.holder == (lab.k, lab.alpha),
        "second_order": second.passed,
        "cascade_monotone": cascade_monotone(cascade),
        "barrier_positive_eps": barrier.passed and barrier.eps > 0,
    }
    return PipelineResult(s, cone, A, solution, field_, ledger, fit, calib, second, expansion, free,
                          cascade, barrier, sand, checks)


def _default_cutoff(cone: ConeGeometry) -> float:
    """Value of the fourth exponent (found from a generous provisional ledger)."""
    probe = build_ledger(cone, 8.0 / cone.mu)
    return probe[min(3, len(probe) - 1)].value
