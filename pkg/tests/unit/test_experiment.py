"""
Unit tests for sweep configuration, summaries and the CLI surface.

Tests cover:
- ExperimentConfig validation, YAML loading and overrides
- Config hash stability
- Sweep points and per-point scenarios
- Summary aggregation across layouts
- Verification run output
- main() exit codes
"""

import csv
import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

sys.path.insert(0, str(Path(__file__).parent.parent.parent / "src"))
sys.path.insert(0, str(Path(__file__).parent.parent.parent))


def write_results(path: Path, rows):
    from results_store import CSV_COLUMNS

    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({col: row.get(col, "") for col in CSV_COLUMNS})


class TestExperimentConfig:
    """Tests for ExperimentConfig."""

    def test_shipped_sweep(self):
        """Five benchmarked algorithms over 5 layouts x 3 SNR x 3 SER."""
        from experiment import ExperimentConfig

        config = ExperimentConfig.from_yaml()
        assert [k.value for k in config.algorithms] == ["mwf", "mwf_ext", "aec_nr", "nr_aec_mod", "nrext_aec_pf"]
        assert len(config.points()) == 45
        assert config.room.dimensions == (5.0, 5.0, 3.0)
        assert config.scenario.num_loudspeakers == 2

    def test_overrides_replace_yaml_values(self):
        """Keyword overrides win; None leaves the file value."""
        from experiment import ExperimentConfig

        config = ExperimentConfig.from_yaml(None, seed=7, layouts=[1, 2], snr_grid=None)
        assert config.seed == 7
        assert config.layouts == [1, 2]
        assert config.snr_grid == [-15.0, 0.0, 15.0]

    def test_room_and_scenario_sections(self, tmp_path):
        """Sections in the sweep file override room.yaml and scenario.yaml."""
        from experiment import ExperimentConfig

        path = tmp_path / "sweep.yaml"
        path.write_text(
            "algorithms: [mwf]\n"
            "room:\n  reflection_coefficient: 0.3\n"
            "scenario:\n  num_loudspeakers: 1\n"
        )
        config = ExperimentConfig.from_yaml(path)
        assert config.room.reflection_coefficient == 0.3
        assert config.room.ir_length == 128
        assert config.scenario.num_loudspeakers == 1

    def test_rejects_closed_form_only_algorithm(self):
        """The unmodified NR-AEC cannot be swept."""
        from experiment import ExperimentConfig

        with pytest.raises(ValidationError):
            ExperimentConfig(algorithms=["nr_aec"])

    def test_rejects_unknown_algorithm(self):
        """Names must be algorithm kinds."""
        from experiment import ExperimentConfig

        with pytest.raises(ValidationError):
            ExperimentConfig(algorithms=["kalman"])

    def test_rejects_duplicate_algorithms(self):
        """Each algorithm once."""
        from experiment import ExperimentConfig

        with pytest.raises(ValidationError):
            ExperimentConfig(algorithms=["mwf", "mwf"])

    def test_rejects_bad_layout(self):
        """Layouts are 1..5."""
        from experiment import ExperimentConfig

        with pytest.raises(ValidationError):
            ExperimentConfig(layouts=[0, 6])

    def test_rejects_empty_grid(self):
        """Grids need at least one value."""
        from experiment import ExperimentConfig

        with pytest.raises(ValidationError):
            ExperimentConfig(snr_grid=[])

    def test_rejects_sample_rate_mismatch(self):
        """Room and STFT must share the sample rate."""
        from experiment import ExperimentConfig
        from stft import StftConfig

        with pytest.raises(ValidationError):
            ExperimentConfig(stft=StftConfig(sample_rate=8000))

    def test_config_hash(self):
        """Same config, same hash; any change, a new hash."""
        from experiment import ExperimentConfig

        a = ExperimentConfig.from_yaml()
        b = ExperimentConfig.from_yaml()
        assert a.config_hash() == b.config_hash()
        assert len(a.config_hash()) == 64
        assert ExperimentConfig.from_yaml(None, seed=1).config_hash() != a.config_hash()

    def test_scenario_for_point(self):
        """Point values and the master seed land in the scenario."""
        from experiment import ExperimentConfig

        config = ExperimentConfig.from_yaml(None, seed=5).model_copy(update={"duration_seconds": 2.0})
        scenario = config.scenario_for(3, 15.0, -15.0)
        assert (scenario.layout, scenario.snr_in_db, scenario.ser_in_db) == (3, 15.0, -15.0)
        assert scenario.seed == 5
        assert scenario.duration_seconds == 2.0
        assert config.room_for_seed().seed == 5


class TestSummarize:
    """Tests for summarize."""

    def test_mean_and_std_across_layouts(self, temp_results_dir):
        """Population statistics per (algorithm, SNR, SER); failures skipped."""
        from experiment import summarize

        rows = [
            {"layout": k, "snr_in_db": 0.0, "ser_in_db": 0.0, "algorithm": "mwf", "status": "ok",
             "delta_snr_db": float(k), "delta_ser_db": 10.0, "sd_db": -float(k)}
            for k in (1, 2, 3)
        ]
        rows.append({"layout": 4, "snr_in_db": 0.0, "ser_in_db": 0.0, "algorithm": "mwf",
                     "status": "failed", "error": "boom"})
        write_results(temp_results_dir / "results.csv", rows)

        summary = summarize(temp_results_dir)
        assert len(summary) == 1
        row = summary[0]
        assert row["count"] == 3
        assert row["delta_snr_db_mean"] == pytest.approx(2.0)
        assert row["delta_snr_db_std"] == pytest.approx(np.sqrt(2.0 / 3.0))
        assert row["delta_ser_db_std"] == pytest.approx(0.0)
        assert row["sd_db_mean"] == pytest.approx(-2.0)
        assert (temp_results_dir / "summary.csv").exists()

    def test_groups_are_sorted(self, temp_results_dir):
        """One row per group in algorithm, SNR, SER order."""
        from experiment import summarize

        base = {"layout": 1, "status": "ok", "delta_snr_db": 1.0, "delta_ser_db": 1.0, "sd_db": 0.0}
        write_results(temp_results_dir / "results.csv", [
            {**base, "algorithm": "mwf", "snr_in_db": 15.0, "ser_in_db": 0.0},
            {**base, "algorithm": "aec_nr", "snr_in_db": 0.0, "ser_in_db": 0.0},
            {**base, "algorithm": "mwf", "snr_in_db": -15.0, "ser_in_db": 0.0},
        ])
        keys = [(r["algorithm"], r["snr_in_db"]) for r in summarize(temp_results_dir)]
        assert keys == [("aec_nr", 0.0), ("mwf", -15.0), ("mwf", 15.0)]

    def test_no_completed_runs(self, temp_results_dir):
        """Only failures: nothing to summarize."""
        from errors import InvalidInputError
        from experiment import summarize

        write_results(temp_results_dir / "results.csv", [
            {"layout": 1, "snr_in_db": 0.0, "ser_in_db": 0.0, "algorithm": "mwf", "status": "failed"},
        ])
        with pytest.raises(InvalidInputError):
            summarize(temp_results_dir)

    def test_missing_results(self, temp_results_dir):
        """A directory without results.csv is an error."""
        from errors import InvalidInputError
        from experiment import summarize

        with pytest.raises(InvalidInputError):
            summarize(temp_results_dir)


class TestRunVerification:
    """Tests for run_verification."""

    def test_writes_certificate_csv(self, temp_results_dir, capsys):
        """Small grid passes and is saved as CSV."""
        from experiment import run_verification

        assert run_verification(temp_results_dir, seeds=[0], sizes=[(1, 1), (2, 2)])
        assert "check" in capsys.readouterr().out
        with open(temp_results_dir / "verification.csv", newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert rows
        assert {row["passed"] for row in rows} == {"True"}


class TestMain:
    """Tests for the CLI entry point."""

    def test_bad_config_exit_code(self, mock_env_vars, tmp_path):
        """Invalid sweep files exit with status 2."""
        import main

        path = tmp_path / "bad.yaml"
        path.write_text("algorithms: [nr_aec]\n")
        assert main.main(["--config", str(path), "--out", str(tmp_path / "out")]) == main.EXIT_BAD_CONFIG

    def test_missing_config_exit_code(self, mock_env_vars, tmp_path):
        """A missing sweep file exits with status 2."""
        import main

        code = main.main(["--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "out")])
        assert code == main.EXIT_BAD_CONFIG

    def test_summarize_without_results(self, mock_env_vars, temp_results_dir):
        """--summarize on an empty directory exits with status 2."""
        import main

        assert main.main(["--summarize", str(temp_results_dir)]) == main.EXIT_BAD_CONFIG

    def test_summarize(self, mock_env_vars, temp_results_dir):
        """--summarize aggregates an existing results.csv."""
        import main

        write_results(temp_results_dir / "results.csv", [
            {"layout": 1, "snr_in_db": 0.0, "ser_in_db": 0.0, "algorithm": "mwf", "status": "ok",
             "delta_snr_db": 1.0, "delta_ser_db": 2.0, "sd_db": -0.5},
        ])
        assert main.main(["--summarize", str(temp_results_dir)]) == main.EXIT_OK
        assert (temp_results_dir / "summary.csv").exists()

    def test_parser_lists(self):
        """Comma-separated grids are parsed into lists."""
        from main import build_parser

        args = build_parser().parse_args(["--snr-grid=-5,5", "--layouts", "1,3", "--algorithms", "mwf,aec_nr"])
        assert args.snr_grid == [-5.0, 5.0]
        assert args.layouts == [1, 3]
        assert args.algorithms == ["mwf", "aec_nr"]

    def test_desk_and_duration_exclusive(self):
        """--desk and --duration cannot be combined."""
        from main import build_parser

        with pytest.raises(SystemExit):
            build_parser().parse_args(["--desk", "--duration", "3"])

    def test_env_seed_only_when_set(self, monkeypatch):
        """AECNR_SEED applies only when present in the environment."""
        from config import Settings
        from main import _env_seed

        monkeypatch.delenv("AECNR_SEED", raising=False)
        assert _env_seed(Settings(_env_file=None)) is None
        monkeypatch.setenv("AECNR_SEED", "77")
        assert _env_seed(Settings(_env_file=None)) == 77
