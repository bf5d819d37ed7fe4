"""Command-line scenario runner: ``corner-ma <scenario> --config <file> [--out <dir>]``.

Exit status: 0 when every threshold passes, 2 when a threshold fails,
1 on any error.  Every file written is listed with its SHA-256 digest in
MANIFEST.json.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import math
import os
import sys
from contextlib import nullcontext
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .analysis import fit_leading, gnuplot_script, mode_projection
from .cone import AffineMap2, ConeGeometry, Quadratic, StripField, affine_normalizer, model_quadratic
from .config import SCENARIOS, ConfigError, ScenarioConfig
from .examples3d import verify3d
from .expansion import build_expansion, evaluate, strip_residual
from .ledger import build_ledger
from .pipeline import PipelineError, PipelineSettings, _default_cutoff, run_corner_pipeline
from .solver import ProblemSpec, SolverError, solve_dirichlet

log = logging.getLogger("corner_ma")

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Fraction):
        return [obj.numerator, obj.denominator]
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_plain) + "\n"


class Artifacts:
    """Writes files under one directory and records their digests."""

    def __init__(self, root: Path):
        self.root = root
        self.files: Dict[str, str] = {}
        root.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> Path:
        path = self.root / name
        data = text.encode()
        path.write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def manifest(self, scenario: str, status: str, failed_stage: Optional[str] = None,
                 message: Optional[str] = None) -> None:
        doc = {
            "scenario": scenario,
            "status": status,
            "failed_stage": failed_stage,
            "message": message,
            "files": [{"path": k, "sha256": v} for k, v in sorted(self.files.items())],
        }
        (self.root / "MANIFEST.json").write_text(dumps(doc))


def _cone(mu) -> ConeGeometry:
    if isinstance(mu, str):
        frac = Fraction(mu.strip())
        return ConeGeometry.rational(frac.numerator, frac.denominator)
    return ConeGeometry(float(mu))


def _csv(header: str, rows) -> str:
    buf = io.StringIO()
    buf.write(header + "\n")
    for row in rows:
        buf.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row) + "\n")
    return buf.getvalue()


# -- scenarios ---------------------------------------------------------------

def run_ledger(cfg: ScenarioConfig, out: Artifacts) -> bool:
    p = cfg.parameters
    ledger = build_ledger(_cone(p["mu"]), float(p["cutoff"]))
    table = ledger.to_table()
    print(table)
    out.write("ledger.csv", ledger.to_csv())
    out.write("ledger.txt", table + "\n")
    out.write("summary.json", dumps({"mu": ledger.cone.mu, "cutoff": ledger.cutoff,
                                     "values": ledger.values, "passed": True}))
    return True


def run_solve(cfg: ScenarioConfig, out: Artifacts) -> bool:
    p = cfg.parameters
    shape = AffineMap2(np.array(p["shape"], dtype=float)) if p["shape"] is not None else None
    boundary = model_quadratic(p["c"]) if p["boundary"] == "model" else Quadratic(np.eye(2))
    spec = ProblemSpec(f=float(p["c"]), boundary=boundary, n=p["n"], width=p["width"], height=p["height"],
                       shape=shape, grading=p["grading"], max_stretch=p["max_stretch"])
    sol = solve_dirichlet(spec, tol=p["tol"], max_iters=p["max_iters"])
    out.write("solution.csv", sol.to_csv())
    out.write("convergence.csv", sol.log_csv())
    out.write("convergence.gp", "\n".join([
        "# Newton residual history",
        "set datafile separator ','",
        "set logscale y",
        "set xlabel 'iteration'",
        "set ylabel 'sup |det D^2 u - f|'",
        "plot 'convergence.csv' using 1:2 every ::1 with linespoints title 'residual'",
        "pause -1", ""]))
    passed = sol.residual_sup < p["tol"] and sol.convex_certificate
    out.write("summary.json", dumps({
        "residual_sup": sol.residual_sup, "newton_iters": sol.newton_iters,
        "convex_certificate": sol.convex_certificate, "start": sol.start, "passed": passed}))
    print(f"residual {sol.residual_sup:.3e} after {sol.newton_iters} Newton iterations; "
          f"convex certificate {sol.convex_certificate}")
    return passed


def run_pipeline(cfg: ScenarioConfig, out: Artifacts) -> bool:
    p = cfg.parameters
    settings = PipelineSettings(
        c=float(p["c"]), n=p["n"], grading=p["grading"], max_stretch=p["max_stretch"], tol=p["tol"],
        window=tuple(p["window"]), calibration_window=tuple(p["calibration_window"]),
        strip_window=tuple(p["strip_window"]), strip_resolution=tuple(p["strip_resolution"]),
        cutoff=p["cutoff"], barrier_eps=p["barrier_eps"])
    res = run_corner_pipeline(settings)
    field = res.field
    w1 = mode_projection(field, 1)
    out.write("convergence.csv", res.solution.log_csv())
    out.write("strip_field.csv", _field_csv(field))
    out.write("mode1.csv", _csv("t,w1", zip(field.t.tolist(), w1.tolist())))
    out.write("fit_report.json", dumps(res.fit.to_dict()))
    out.write("mode1.gp", gnuplot_script(res.fit, "mode1.csv"))
    out.write("expansion.json", res.expansion.to_json() + "\n")
    out.write("cascade.csv", _csv("stage,truncation,slope,stderr,max_residual",
                                  [(s.stage, float(s.truncation), "floor" if s.slope is None else float(s.slope),
                                    float(s.stderr), float(s.max_residual)) for s in res.cascade]))
    out.write("summary.json", dumps(res.summary()))
    for name, ok in res.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"exponent_hat {res.fit.exponent_hat:.6f} (predicted {res.fit.predicted_exponent:.6f}, "
          f"gap {res.fit.relative_gap:.4f}); c10 sign {res.fit.c10_sign}")
    return res.passed


def _field_csv(field: StripField) -> str:
    buf = io.StringIO()
    buf.write("t,theta,value\n")
    for i, t in enumerate(field.t):
        for j, th in enumerate(field.theta):
            buf.write(f"{t:.17g},{th:.17g},{field.values[i, j]:.17g}\n")
    return buf.getvalue()


def run_expansion_check(cfg: ScenarioConfig, out: Artifacts) -> bool:
    p = cfg.parameters
    cone = _cone(p["mu"])
    cutoff = p["cutoff"] if p["cutoff"] is not None else max(float(p["upto"]) + 1e-6, _default_cutoff(cone))
    ledger = build_ledger(cone, cutoff)
    free = {float(k): float(v) for k, v in p["free_coefficients"].items()}
    free[ledger[0].value] = float(p["c1"])
    e = build_expansion(ledger, free, upto=float(p["upto"]))

    checks = {}
    resid = [r for r in strip_residual(e) if r.value <= e.truncation + 1e-9]
    worst = max((r.profile.sup() for r in resid), default=0.0)
    checks["strip_residual_below_1e-8"] = worst < 1e-8
    checks["profiles_vanish_at_edges"] = all(s.profile.values[0] == 0 and s.profile.values[-1] == 0
                                             for s in e.terms)
    lam = float(p["scale"])
    free_l = dict(free)
    free_l[ledger[0].value] = lam * float(p["c1"])
    e_l = build_expansion(ledger, free_l, upto=min(float(p["upto"]), ledger[1].value))
    second = [s for s in e.terms if s.exponent.position == 2 and s.log_power == 0]
    second_l = [s for s in e_l.terms if s.exponent.position == 2 and s.log_power == 0]
    scale_err = None
    if second and second_l:
        scale_err = float(np.max(np.abs(second_l[0].profile.values - lam ** 2 * second[0].profile.values)))
        checks["quadratic_scaling_1e-12"] = scale_err < 1e-12
    closed_err = None
    if second and cone.is_sharp and not ledger[1].resonant:
        g, a = ledger[1].value, ledger[0].value
        th = second[0].profile.nodes
        K = float(p["c1"]) ** 2 * a * a * (a - 1) ** 2
        exact = K / g ** 2 * (1 - np.cos(g * th)
                              - (1 - math.cos(g * cone.angle)) / math.sin(g * cone.angle) * np.sin(g * th))
        closed_err = float(np.max(np.abs(second[0].profile.values - exact)))
        checks["second_term_closed_form_1e-10"] = closed_err < 1e-10

    field = evaluate(e, p["window"], p["resolution"])
    out.write("expansion.json", e.to_json() + "\n")
    out.write("field.csv", _field_csv(field))
    out.write("residual_terms.csv", _csv("exponent,log_power,sup", [
        (float(r.value), r.log_power, float(r.profile.sup())) for r in strip_residual(e)]))
    out.write("summary.json", dumps({
        "mu": cone.mu, "truncation": e.truncation, "terms": len(e),
        "log_powers": {f"{k:.12g}": v for k, v in e.log_powers().items()},
        "strip_residual_sup": worst, "scaling_error": scale_err, "closed_form_error": closed_err,
        "checks": checks, "passed": all(checks.values())}))
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return all(checks.values())


def run_verify3d(cfg: ScenarioConfig, out: Artifacts) -> bool:
    rows = verify3d(seed=cfg.seed, n_points=cfg.parameters["n_points"])
    width = max(len(r.name) for r in rows)
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    out.write("verify3d.csv", "check,passed,detail\n" + "".join(
        f"\"{r.name}\",{str(r.passed).lower()},\"{r.detail}\"\n" for r in rows))
    passed = all(r.passed for r in rows)
    out.write("summary.json", dumps({"checks": {r.name: r.passed for r in rows}, "passed": passed}))
    return passed


def run_analyze(cfg: ScenarioConfig, out: Artifacts) -> bool:
    p = cfg.parameters
    cone = _cone(p["mu"]) if p["mu"] is not None else affine_normalizer(float(p["c"]))[1]
    field = StripField.from_csv(p["field_csv"], cone)
    cutoff = p["cutoff"] if p["cutoff"] is not None else _default_cutoff(cone)
    report = fit_leading(field, build_ledger(cone, cutoff), p["window"])
    out.write("mode1.csv", _csv("t,w1", zip(field.t.tolist(), mode_projection(field, 1).tolist())))
    out.write("fit_report.json", dumps(report.to_dict()))
    out.write("mode1.gp", gnuplot_script(report, "mode1.csv"))
    print(report.to_json())
    return True


RUNNERS = {
    "ledger": run_ledger,
    "solve": run_solve,
    "corner_pipeline": run_pipeline,
    "expansion_check": run_expansion_check,
    "verify3d": run_verify3d,
    "analyze": run_analyze,
}


def _thread_limit():
    raw = os.environ.get("CORNER_MA_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CORNER_MA_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError("CORNER_MA_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def run(cfg: ScenarioConfig, out_dir: Optional[str] = None) -> int:
    """Execute one scenario; returns the process exit status."""
    out = Artifacts(Path(out_dir if out_dir is not None else cfg.output_dir))
    out.write("config.json", cfg.to_json() + "\n")
    np.random.seed(cfg.seed)
    try:
        with _thread_limit():
            passed = RUNNERS[cfg.scenario](cfg, out)
    except PipelineError as exc:
        log.error("%s", exc)
        out.manifest(cfg.scenario, "error", exc.stage, str(exc))
        return EXIT_ERROR
    except (ValueError, RuntimeError, OSError) as exc:
        log.error("%s failed: %s", cfg.scenario, exc)
        out.manifest(cfg.scenario, "error", cfg.scenario, str(exc))
        return EXIT_ERROR
    out.manifest(cfg.scenario, "pass" if passed else "fail")
    return EXIT_PASS if passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="corner-ma", description=__doc__.splitlines()[0])
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--config", help="JSON scenario config (defaults are used when omitted)")
    ap.add_argument("--out", help="output directory (overrides output_dir in the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = ScenarioConfig.load(args.config, args.scenario)
        else:
            cfg = ScenarioConfig(args.scenario)
    except (ConfigError, OSError) as exc:
        print(f"corner-ma: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return run(cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
