import json
from pathlib import Path

import pytest

from strata_eval.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main

TOY_MANIFEST = (
    Path(__file__).resolve().parent.parent
    / "src" / "strata_eval" / "data" / "toy-manifest.json"
)


def run_cli(*argv):
    return main(list(argv))


class TestEvaluate:
    def test_report_contains_required_fields(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "dataset": str(TOY_MANIFEST),
                    "basis": {
                        "components": [
                            {"kind": "intercept"},
                            {"kind": "raw"},
                            {"kind": "stratum_indicators"},
                        ]
                    },
                    "cv": {"folds": 3, "replications": 2},
                    "perturbation": {"replicates": 30, "seed": 4},
                    "seed": 1,
                }
            )
        )
        code = run_cli(
            "evaluate", "--config", str(config), "--output-dir", str(tmp_path)
        )
        assert code == EXIT_OK
        report = json.loads((tmp_path / "evaluate-report.json").read_text())
        for metric in ("brier", "omr"):
            for variant in ("SL", "SSL", "DR"):
                assert set(report["accuracy"][metric][variant]) == {
                    "apparent", "cv", "ensemble",
                }
            assert report["se"][metric] is not None
            assert len(report["ci"][metric]) == 2
        manifest = json.loads((tmp_path / "run-manifest.json").read_text())
        assert manifest["command"] == "evaluate"
        assert "config_hash" in manifest
        csv_lines = (tmp_path / "evaluate-report.csv").read_text().splitlines()
        assert csv_lines[0].startswith("schema,")

    def test_invalid_metric_threshold_exits_2(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "dataset": str(TOY_MANIFEST),
                    "metrics": [{"kind": "omr", "threshold": 1.5}],
                    "seed": 1,
                }
            )
        )
        code = run_cli(
            "evaluate", "--config", str(config), "--output-dir", str(tmp_path)
        )
        assert code == EXIT_VALIDATION

    def test_missing_dataset_exits_2(self, tmp_path):
        code = run_cli(
            "evaluate", "--dataset", str(tmp_path / "nope.json"),
            "--output-dir", str(tmp_path),
        )
        assert code == EXIT_VALIDATION


class TestFit:
    def test_writes_fits(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "dataset": str(TOY_MANIFEST),
                    "basis": {
                        "components": [
                            {"kind": "intercept"},
                            {"kind": "raw"},
                        ]
                    },
                    "cv": {"folds": 3, "replications": 1},
                    "seed": 1,
                }
            )
        )
        code = run_cli("fit", "--config", str(config), "--output-dir", str(tmp_path))
        assert code == EXIT_OK
        fits = json.loads((tmp_path / "fits.json").read_text())
        assert len(fits["theta_sl"]) == 4
        assert len(fits["theta_ssl_ase"]) == 4
        assert all(0.0 <= w <= 1.0 for w in fits["combination_weights"])


class TestAllocate:
    def test_direct_inputs(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "stratum_proportions": [0.69, 0.31],
                    "stratum_sds": [0.1517, 0.3768],
                    "budget": 1000,
                }
            )
        )
        code = run_cli(
            "allocate", "--config", str(config), "--output-dir", str(tmp_path)
        )
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "allocation.json").read_text())
        assert sum(payload["allocation"]) == 1000
        assert payload["shares"][0] == pytest.approx(0.47, abs=0.01)
        out = capsys.readouterr().out
        assert "stratum" in out

    def test_missing_inputs_exit_2(self, tmp_path):
        code = run_cli("allocate", "--output-dir", str(tmp_path), "--budget", "10")
        assert code == EXIT_VALIDATION


class TestSimulate:
    def test_smoke_profile_emits_table_shaped_cells(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "scenario": {
                        "scenario": "main-i",
                        "n_strata": 2,
                        "n_per_stratum": 100,
                        "n_unlabeled": 2500,
                    },
                    "profile": "smoke",
                    "cv": {"folds": 3},
                    "seed": 7,
                    "oracle_cache": str(tmp_path / "oracle"),
                    "workers": 1,
                }
            )
        )
        code = run_cli(
            "simulate", "--config", str(config), "--output-dir", str(tmp_path)
        )
        assert code == EXIT_OK
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert lines[0].split(",")[:6] == [
            "schema", "scenario", "kind", "estimator", "target", "flavor",
        ]
        assert any(",accuracy,SSL,brier,ensemble," in line for line in lines)
        assert (tmp_path / "checkpoint.jsonl").exists()

    def test_seed_required(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"scenario": "main-i"}))
        code = run_cli(
            "simulate", "--config", str(config), "--output-dir", str(tmp_path)
        )
        assert code == EXIT_VALIDATION


def test_exit_codes_are_distinct():
    assert EXIT_OK == 0 and EXIT_VALIDATION == 2 and EXIT_NUMERICAL == 3


class TestDeterminism:
    def test_identical_config_and_seed_give_byte_identical_reports(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "dataset": str(TOY_MANIFEST),
                    "basis": {
                        "components": [
                            {"kind": "intercept"},
                            {"kind": "raw"},
                        ]
                    },
                    "cv": {"folds": 3, "replications": 2},
                    "perturbation": {"replicates": 25, "seed": 9},
                    "save_replicates": True,
                    "seed": 3,
                }
            )
        )
        payloads = []
        for run in ("first", "second"):
            outdir = tmp_path / run
            assert run_cli(
                "perturb", "--config", str(config), "--output-dir", str(outdir)
            ) == EXIT_OK
            payloads.append((outdir / "perturb-report.json").read_bytes())
            report = json.loads(payloads[-1])
            assert len(report["perturb_values"]["brier"]) == 25
            assert report["cv_diagnostics"]["SSL"]["brier"]["fold_values"]
        assert payloads[0] == payloads[1]
