"""Tests for the sweep runner, spec parsing, CSV emission and the CLI."""
import json
import math
import subprocess
import sys

import pytest

from mpqkd.cli import main
from mpqkd.sweep import (
    CSV_COLUMNS,
    SweepSpec,
    SweepValidationError,
    load_spec,
    run_sweep,
    verify_oracles,
    write_rows,
)

CUSTOM_BASE = {
    "mode": "custom",
    "distance_start": 200,
    "distance_stop": 210,
    "distance_step": 10,
    "delta_list": [50],
    "lambda_list": [100],
    "e_d_list": [0.04],
    "methods": ["OI"],
}


class TestSpecParsing:
    def test_unknown_keys_rejected(self):
        with pytest.raises(SweepValidationError, match="unknown keys: bogus"):
            load_spec({**CUSTOM_BASE, "bogus": 1})

    def test_empty_methods_rejected(self):
        with pytest.raises(SweepValidationError, match="methods"):
            load_spec({**CUSTOM_BASE, "methods": []})

    def test_unknown_method_rejected(self):
        with pytest.raises(SweepValidationError, match="methods"):
            load_spec({**CUSTOM_BASE, "methods": ["OI", "magic"]})

    def test_bad_grid_rejected(self):
        with pytest.raises(SweepValidationError, match="distance grid"):
            load_spec({**CUSTOM_BASE, "distance_step": -1})
        with pytest.raises(SweepValidationError, match="required for custom"):
            load_spec({k: v for k, v in CUSTOM_BASE.items() if k != "distance_start"})

    def test_negative_gap_rejected(self):
        with pytest.raises(SweepValidationError, match="delta_list"):
            load_spec({**CUSTOM_BASE, "delta_list": [-5]})

    def test_interval_strings_parse(self):
        spec = load_spec({**CUSTOM_BASE, "lambda_list": ["inf", 10]})
        assert spec.lambda_list == (math.inf, 10.0)
        with pytest.raises(SweepValidationError, match="cannot parse"):
            load_spec({**CUSTOM_BASE, "lambda_list": ["many"]})

    def test_fixed_intensity_needs_mu(self):
        with pytest.raises(SweepValidationError, match="mu_a/mu_b"):
            load_spec({**CUSTOM_BASE, "methods": ["fixed-intensity"]})

    def test_preset_rejects_parameter_overrides(self):
        with pytest.raises(SweepValidationError, match="not overridable"):
            load_spec({"mode": "table2", "delta_list": [10]})

    def test_env_seed_override(self, monkeypatch):
        monkeypatch.setenv("MPQKD_SEED", "271828")
        assert load_spec({**CUSTOM_BASE, "seed": 5}).seed == 271828

    def test_spec_from_file(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(CUSTOM_BASE))
        assert load_spec(str(path)).mode == "custom"


class TestRunSweep:
    def test_table2_reproduction(self):
        rows = run_sweep(load_spec({"mode": "table2"}))
        assert len(rows) == 3
        expected = {0.0: (0.4998, 0.4998), 50.0: (0.2402, 0.7594), 100.0: (0.0901, 0.9011)}
        for row in rows:
            mu_a, mu_b = expected[row.delta_km]
            assert row.mu_a == pytest.approx(mu_a, abs=5e-3)
            assert row.mu_b == pytest.approx(mu_b, abs=5e-3)
            assert row.mu_b / row.mu_a == pytest.approx(mu_b / mu_a, abs=2e-2)

    def test_custom_rows_carry_breakdown_and_bounds(self):
        rows = run_sweep(load_spec({**CUSTOM_BASE, "methods": ["OI", "PLOB"]}))
        assert len(rows) == 4  # 2 totals x 2 methods
        oi = [r for r in rows if r.method == "OI"]
        plob = [r for r in rows if r.method == "PLOB"]
        for row in oi:
            assert row.rate > 0 and row.p is not None and row.r_p is not None
            assert row.plob_det == pytest.approx(0.2 * row.plob, rel=1e-4)
        for row in plob:
            assert row.rate == row.plob
            assert row.mu_a is None

    def test_fixed_intensity_method(self):
        rows = run_sweep(
            load_spec(
                {**CUSTOM_BASE, "methods": ["fixed-intensity"], "mu_a": 0.3, "mu_b": 0.7}
            )
        )
        assert all(r.mu_a == 0.3 and r.mu_b == 0.7 for r in rows)

    def test_csv_determinism(self, tmp_path):
        paths = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            run_sweep(load_spec({**CUSTOM_BASE, "out": str(out), "seed": 9}))
            paths.append(out.read_bytes())
        assert paths[0] == paths[1]

    def test_csv_header_fixed(self, tmp_path):
        out = tmp_path / "rows.csv"
        run_sweep(load_spec({**CUSTOM_BASE, "out": str(out)}))
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 3

    def test_unwritable_output_raises_oserror(self, tmp_path):
        rows = run_sweep(load_spec(CUSTOM_BASE))
        with pytest.raises(OSError):
            write_rows(rows, str(tmp_path / "missing_dir" / "rows.csv"))

    def test_workers_give_identical_rows(self):
        sequential = run_sweep(load_spec(CUSTOM_BASE))
        parallel = run_sweep(load_spec({**CUSTOM_BASE, "workers": 2}))
        assert sequential == parallel

    def test_fig3_intensity_curves(self):
        rows = run_sweep(load_spec({"mode": "fig3"}))
        for lam in (1e6, 1.0):
            curve = [r for r in rows if r.lam == lam]
            assert len(curve) == 16
            assert all(r.mu_a <= r.mu_b + 1e-6 for r in curve)
        # the unbounded-interval curve tracks mu_a + mu_b ~ 1 until dark
        # counts start to dominate at large gaps
        saturated = [r for r in rows if r.lam == 1e6 and r.delta_km <= 100.0]
        assert all(abs(r.mu_a + r.mu_b - 1.0) < 0.02 for r in saturated)


class TestVerifyOracles:
    def test_checks_pass_at_healthy_point(self):
        spec = load_spec(
            {
                **CUSTOM_BASE,
                "distance_start": 120,
                "distance_stop": 130,
                "delta_list": [0],
                "n_rounds": 300_000,
                "seed": 3,
            }
        )
        report = verify_oracles(spec)
        names = {entry["check"].split(":")[1] for entry in report}
        assert {"p", "r_p", "r_s", "decoy_bracket", "decoy_rate_bounded"} <= names
        assert all(entry["passed"] for entry in report)


class TestCli:
    def test_optimize_prints_json(self, capsys):
        code = main(["optimize", "--la", "100", "--delta", "1", "--lambda", "inf"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["mu_a"] == pytest.approx(0.5, abs=5e-3)
        assert payload["converged"] is True

    def test_run_with_config(self, tmp_path, capsys):
        config = tmp_path / "sweep.json"
        out = tmp_path / "rows.csv"
        config.write_text(json.dumps({**CUSTOM_BASE, "out": str(out)}))
        assert main(["run", "--config", str(config)]) == 0
        assert out.exists()
        assert "wrote 2 rows" in capsys.readouterr().out

    def test_run_without_out_prints_csv(self, tmp_path, capsys):
        config = tmp_path / "sweep.json"
        config.write_text(json.dumps(CUSTOM_BASE))
        assert main(["run", "--config", str(config)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 3

    def test_validation_error_exit_code(self, tmp_path, capsys):
        config = tmp_path / "sweep.json"
        config.write_text(json.dumps({**CUSTOM_BASE, "oops": True}))
        assert main(["run", "--config", str(config)]) == 1
        assert "unknown keys" in capsys.readouterr().err

    def test_io_error_exit_code(self, tmp_path, capsys):
        config = tmp_path / "sweep.json"
        config.write_text(
            json.dumps({**CUSTOM_BASE, "out": str(tmp_path / "no_dir" / "x.csv")})
        )
        assert main(["run", "--config", str(config)]) == 2

    def test_verify_exit_code_on_success(self, tmp_path, capsys):
        config = tmp_path / "sweep.json"
        config.write_text(
            json.dumps(
                {
                    **CUSTOM_BASE,
                    "distance_start": 120,
                    "distance_stop": 120,
                    "delta_list": [0],
                    "n_rounds": 200_000,
                }
            )
        )
        assert main(["verify", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        assert "checks passed" in out

    def test_installed_entry_point(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "mpqkd.cli", "optimize", "--la", "50", "--delta", "4", "--lambda", "1"],
            capture_output=True,
            text=True,
        )
        assert result.returncode == 0
        assert json.loads(result.stdout)["rate"] > 0
