"""Scenario configuration: JSON documents with a schema version, validated up front."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

SCHEMA_VERSION = 1
SCENARIOS = ("ledger", "solve", "corner_pipeline", "expansion_check", "verify3d", "analyze")
TOP_KEYS = {"schema_version", "scenario", "parameters", "output_dir", "seed"}

_DEFAULT_C = math.sin(0.3 * math.pi) ** 2

# per scenario: key -> default (None means optional with no default)
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "ledger": {"mu": "2/5", "cutoff": 5.1},
    "solve": {"c": 1.0, "boundary": "half_norm", "n": 129, "width": 1.0, "height": 1.0,
              "shape": None, "grading": 1.0, "max_stretch": 16.0, "tol": 1e-10, "max_iters": 50},
    "corner_pipeline": {"c": _DEFAULT_C, "n": 513, "grading": 1.05, "max_stretch": 16.0, "tol": 1e-10,
                        "window": [1.5, 3.5], "calibration_window": [2.5, 5.5], "strip_window": [1.0, 6.0],
                        "strip_resolution": [201, 129], "cutoff": None, "barrier_eps": None},
    "expansion_check": {"mu": "2/5", "c1": -0.3, "upto": 3.0, "cutoff": None, "free_coefficients": {},
                        "scale": 2.0, "window": [1.0, 4.0], "resolution": [121, 65]},
    "verify3d": {"n_points": 100},
    "analyze": {"field_csv": None, "mu": None, "c": None, "window": [1.5, 3.5], "cutoff": None},
}


class ConfigError(ValueError):
    pass


def _interval(value, name: str, lo: float = 0.0):
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ConfigError(f"{name} must be a pair [a, b]")
    a, b = float(value[0]), float(value[1])
    if not (lo <= a < b):
        raise ConfigError(f"{name} must satisfy {lo} <= a < b, got {value}")
    return [a, b]


def _positive(value, name: str):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
        raise ConfigError(f"{name} must be a positive number")
    return value


def _mu(value):
    try:
        if isinstance(value, str):
            frac = Fraction(value.strip())
            mu = float(frac)
        else:
            mu = float(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse mu {value!r}") from exc
    if not 0.0 < mu < 1.0:
        raise ConfigError("mu must lie in (0, 1)")
    return value


def _validate(scenario: str, p: Dict[str, Any]) -> None:
    if scenario in ("ledger", "expansion_check"):
        _mu(p["mu"])
    if scenario == "ledger":
        _positive(p["cutoff"], "cutoff")
    if scenario in ("solve", "corner_pipeline"):
        c = _positive(p["c"], "c")
        if scenario == "corner_pipeline" and not c < 1:
            raise ConfigError("corner_pipeline needs c in (0, 1)")
        n = p["n"]
        if not isinstance(n, int) or n < 17:
            raise ConfigError("n must be an integer >= 17")
        if not 1.0 <= float(p["grading"]) <= 1.05:
            raise ConfigError("grading must lie in [1, 1.05]")
        _positive(p["tol"], "tol")
    if scenario == "solve":
        if p["boundary"] not in ("half_norm", "model"):
            raise ConfigError("boundary must be 'half_norm' or 'model'")
        if p["boundary"] == "model" and not 0 < p["c"] <= 1:
            raise ConfigError("boundary 'model' needs c in (0, 1]")
        _positive(p["width"], "width")
        _positive(p["height"], "height")
        if p["shape"] is not None:
            m = p["shape"]
            if not (isinstance(m, list) and len(m) == 2 and all(isinstance(r, list) and len(r) == 2 for r in m)):
                raise ConfigError("shape must be a 2x2 matrix")
    if scenario == "corner_pipeline":
        p["window"] = _interval(p["window"], "window")
        p["calibration_window"] = _interval(p["calibration_window"], "calibration_window")
        p["strip_window"] = _interval(p["strip_window"], "strip_window")
        res = p["strip_resolution"]
        if not (isinstance(res, list) and len(res) == 2 and all(isinstance(k, int) and k >= 3 for k in res)):
            raise ConfigError("strip_resolution must be two integers >= 3")
    if scenario == "expansion_check":
        p["window"] = _interval(p["window"], "window")
        if not isinstance(p["free_coefficients"], dict):
            raise ConfigError("free_coefficients must map exponent values to numbers")
    if scenario == "verify3d":
        if not isinstance(p["n_points"], int) or p["n_points"] < 1:
            raise ConfigError("n_points must be a positive integer")
    if scenario == "analyze":
        if p["field_csv"] is None:
            raise ConfigError("analyze needs field_csv")
        if (p["mu"] is None) == (p["c"] is None):
            raise ConfigError("analyze needs exactly one of mu or c")
        if p["mu"] is not None:
            _mu(p["mu"])
        p["window"] = _interval(p["window"], "window")


@dataclass
class ScenarioConfig:
    scenario: str
    parameters: Dict[str, Any] = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        defaults = DEFAULTS[self.scenario]
        unknown = set(self.parameters) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown parameter(s) for {self.scenario}: {', '.join(sorted(unknown))}")
        merged = {k: v for k, v in defaults.items()}
        merged.update(json.loads(json.dumps(self.parameters)))
        _validate(self.scenario, merged)
        self.parameters = merged
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "scenario": self.scenario,
                "parameters": self.parameters, "output_dir": self.output_dir, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping, scenario: Optional[str] = None) -> "ScenarioConfig":
        unknown = set(doc) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        name = doc.get("scenario", scenario)
        if scenario is not None and name != scenario:
            raise ConfigError(f"config is for scenario {name!r}, not {scenario!r}")
        if name is None:
            raise ConfigError("config names no scenario")
        return cls(name, dict(doc.get("parameters", {})), doc.get("output_dir", "out"), doc.get("seed", 0))

    @classmethod
    def load(cls, path, scenario: Optional[str] = None) -> "ScenarioConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc, scenario)
