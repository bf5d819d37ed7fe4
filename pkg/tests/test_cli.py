import hashlib
import json
import math

import numpy as np
import pytest

from corner_ma.cli import EXIT_ERROR, EXIT_FAIL, EXIT_PASS, main, run
from corner_ma.config import DEFAULTS, SCENARIOS, ConfigError, ScenarioConfig
from corner_ma.cone import ConeGeometry, StripField


def write_config(tmp_path, scenario, parameters=None, **top):
    doc = {"schema_version": 1, "scenario": scenario, "parameters": parameters or {}}
    doc.update(top)
    path = tmp_path / f"{scenario}.json"
    path.write_text(json.dumps(doc))
    return str(path)


def manifest(out):
    return json.loads((out / "MANIFEST.json").read_text())


def check_digests(out):
    doc = manifest(out)
    for entry in doc["files"]:
        data = (out / entry["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == entry["sha256"]
    return doc


class TestConfig:
    def test_defaults_cover_every_scenario(self):
        assert set(DEFAULTS) == set(SCENARIOS)

    def test_roundtrip(self):
        cfg = ScenarioConfig("solve", {"c": 0.5, "n": 33}, "o", 3)
        back = ScenarioConfig.from_dict(json.loads(cfg.to_json()))
        assert back == cfg and back.parameters["grading"] == 1.0

    @pytest.mark.parametrize("doc,match", [
        ({"schema_version": 1, "scenario": "ledger", "colour": 1}, "unknown config key"),
        ({"schema_version": 1, "scenario": "ledger", "parameters": {"mu": "2/5", "cutof": 5}}, "unknown parameter"),
        ({"schema_version": 2, "scenario": "ledger"}, "schema_version"),
        ({"schema_version": 1, "scenario": "nope"}, "unknown scenario"),
        ({"schema_version": 1, "scenario": "ledger", "parameters": {"mu": "3/2"}}, "mu"),
        ({"schema_version": 1, "scenario": "solve", "parameters": {"n": 9}}, "n must"),
        ({"schema_version": 1, "scenario": "solve", "parameters": {"grading": 1.2}}, "grading"),
        ({"schema_version": 1, "scenario": "corner_pipeline", "parameters": {"c": 1.0}}, "c in"),
        ({"schema_version": 1, "scenario": "corner_pipeline", "parameters": {"window": [3, 1]}}, "window"),
        ({"schema_version": 1, "scenario": "analyze", "parameters": {"field_csv": "f.csv"}}, "exactly one"),
    ])
    def test_rejects(self, doc, match):
        with pytest.raises(ConfigError, match=match):
            ScenarioConfig.from_dict(doc)

    def test_scenario_mismatch(self, tmp_path):
        path = write_config(tmp_path, "ledger")
        with pytest.raises(ConfigError, match="not 'solve'"):
            ScenarioConfig.load(path, "solve")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            ScenarioConfig.load(path)


class TestMain:
    def test_bad_config_exit_one(self, tmp_path, capsys):
        path = write_config(tmp_path, "ledger", {"bogus": 1})
        assert main(["ledger", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_ERROR
        assert "bogus" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["ledger", "--config", str(tmp_path / "absent.json")]) == EXIT_ERROR

    def test_unknown_scenario_rejected_by_parser(self):
        with pytest.raises(SystemExit):
            main(["frobnicate"])

    def test_ledger(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["ledger", "--out", str(out)]) == EXIT_PASS
        doc = check_digests(out)
        assert doc["status"] == "pass"
        assert {f["path"] for f in doc["files"]} == {"config.json", "ledger.csv", "ledger.txt", "summary.json"}
        summary = json.loads((out / "summary.json").read_text())
        assert summary["values"] == [2.5, 3.0, 3.5, 4.0, 4.5, 5.0]
        assert "5" in capsys.readouterr().out

    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert main(["expansion_check", "--out", str(tmp_path / name)]) == EXIT_PASS
        assert manifest(tmp_path / "a") == manifest(tmp_path / "b")

    def test_solve(self, tmp_path):
        out = tmp_path / "o"
        path = write_config(tmp_path, "solve", {"c": 0.6, "boundary": "model", "n": 33})
        assert main(["solve", "--config", path, "--out", str(out)]) == EXIT_PASS
        check_digests(out)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["residual_sup"] < 1e-12 and summary["convex_certificate"]
        assert (out / "convergence.csv").read_text().startswith("iter,residual,step")
        assert "convergence.csv" in (out / "convergence.gp").read_text()

    def test_solver_failure_exit_one(self, tmp_path):
        out = tmp_path / "o"
        cfg = ScenarioConfig("solve", {"c": 0.3, "n": 33, "max_iters": 1})
        assert run(cfg, str(out)) == EXIT_ERROR
        doc = manifest(out)
        assert doc["status"] == "error" and "last residual" in doc["message"]

    def test_unreachable_tolerance_never_passes(self, tmp_path):
        # below the roundoff floor the solver stops early; the run must not report a pass
        cfg = ScenarioConfig("solve", {"c": 0.5, "n": 33, "tol": 1e-300, "max_iters": 50})
        code = run(cfg, str(tmp_path / "o"))
        assert code in (EXIT_FAIL, EXIT_ERROR)
        assert manifest(tmp_path / "o")["status"] != "pass"

    def test_expansion_check(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["expansion_check", "--out", str(out)]) == EXIT_PASS
        summary = json.loads((out / "summary.json").read_text())
        assert summary["strip_residual_sup"] < 1e-8
        assert summary["scaling_error"] < 1e-12 and summary["closed_form_error"] < 1e-10
        assert "PASS  quadratic_scaling_1e-12" in capsys.readouterr().out

    def test_expansion_check_with_collision(self, tmp_path):
        path = write_config(tmp_path, "expansion_check", {"upto": 5.0, "free_coefficients": {"5.0": 0.7}})
        out = tmp_path / "o"
        assert main(["expansion_check", "--config", path, "--out", str(out)]) == EXIT_PASS
        summary = json.loads((out / "summary.json").read_text())
        assert summary["log_powers"]["5"] == [0]

    def test_verify3d(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["verify3d", "--out", str(out)]) == EXIT_PASS
        text = capsys.readouterr().out
        assert text.count("PASS") == 7 and "FAIL" not in text
        assert (out / "verify3d.csv").read_text().startswith("check,passed,detail")

    def test_analyze(self, tmp_path):
        cone = ConeGeometry(0.4)
        field = StripField.from_function(lambda t, th: -0.3 * np.exp(-2.5 * t) * np.sin(2.5 * th),
                                         cone, (1.0, 4.0), (121, 65))
        field.to_csv(tmp_path / "field.csv")
        path = write_config(tmp_path, "analyze", {"field_csv": str(tmp_path / "field.csv"), "mu": 0.4})
        out = tmp_path / "o"
        assert main(["analyze", "--config", path, "--out", str(out)]) == EXIT_PASS
        report = json.loads((out / "fit_report.json").read_text())
        assert report["exponent_hat"] == pytest.approx(2.5, abs=1e-3)
        assert report["c10_sign"] == "negative"
        check_digests(out)

    def test_pipeline_stage_error(self, tmp_path):
        # a strip window reaching past the grid is reported with the failing stage
        cfg = ScenarioConfig("corner_pipeline", {"n": 33, "grading": 1.0, "strip_window": [0.0, 3.0]})
        assert run(cfg, str(tmp_path / "o")) == EXIT_ERROR
        doc = manifest(tmp_path / "o")
        assert doc["status"] == "error" and doc["failed_stage"] is not None

    def test_thread_limit_validated(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CORNER_MA_THREADS", "zero")
        assert run(ScenarioConfig("ledger"), str(tmp_path / "o")) == EXIT_ERROR
        monkeypatch.setenv("CORNER_MA_THREADS", "1")
        assert run(ScenarioConfig("ledger"), str(tmp_path / "p")) == EXIT_PASS


def test_default_pipeline_config_is_the_demonstration():
    cfg = ScenarioConfig("corner_pipeline")
    assert cfg.parameters["c"] == pytest.approx(math.sin(0.3 * math.pi) ** 2)
    assert cfg.parameters["n"] == 513 and cfg.parameters["window"] == [1.5, 3.5]
