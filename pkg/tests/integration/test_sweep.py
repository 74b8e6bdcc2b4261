"""
Integration tests for batch sweeps and the command line.

Tests cover:
- Deterministic results.csv for identical sweeps
- Resuming a finished sweep without recomputation
- Failed runs recorded with the missing regime
- End-to-end CLI run with summary and manifest
- Algorithm ordering at desk scale (slow)
"""

import csv
import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent.parent / "src"))
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

FAST_SCENARIO = (
    "scenario:\n"
    "  duration_seconds: 4.0\n"
    "  speech_on_seconds: 1.0\n"
    "  speech_off_seconds: 1.0\n"
    "  farend_on_seconds: 0.7\n"
    "  farend_off_seconds: 0.6\n"
    "  farend_offset_seconds: 0.3\n"
)


@pytest.fixture
def tiny_config(short_scenario_config):
    """Two algorithms on a single 4 s scenario."""
    from experiment import ExperimentConfig

    config = ExperimentConfig.from_yaml(
        None, algorithms=["mwf", "aec_nr"], snr_grid=[0.0], ser_grid=[0.0], layouts=[1]
    )
    return config.model_copy(update={"scenario": short_scenario_config})


def read_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


@pytest.mark.integration
@pytest.mark.timeout(120)
class TestRunExperiment:
    """Tests for run_experiment."""

    def test_identical_sweeps_identical_csv(self, tiny_config, tmp_path):
        """Same config and seed: byte-identical results.csv."""
        from experiment import run_experiment

        stats = run_experiment(tiny_config, tmp_path / "a")
        run_experiment(tiny_config, tmp_path / "b")
        assert stats["completed"] == 2
        assert stats["failed"] == 0
        a = (tmp_path / "a" / "results.csv").read_bytes()
        assert a == (tmp_path / "b" / "results.csv").read_bytes()

        rows = read_rows(tmp_path / "a" / "results.csv")
        assert [r["algorithm"] for r in rows] == ["aec_nr", "mwf"]
        assert all(r["status"] == "ok" for r in rows)

    def test_resume_skips_finished_runs(self, tiny_config, tmp_path, monkeypatch):
        """A second sweep into the same directory computes nothing."""
        import experiment

        experiment.run_experiment(tiny_config, tmp_path)
        before = (tmp_path / "results.csv").read_bytes()

        def fail(*args, **kwargs):
            raise AssertionError("finished point recomputed")

        monkeypatch.setattr(experiment, "run_point", fail)
        stats = experiment.run_experiment(tiny_config, tmp_path)
        assert stats["completed"] == 2
        assert (tmp_path / "results.csv").read_bytes() == before

    def test_changed_config_reruns(self, tiny_config, tmp_path, monkeypatch):
        """A different config hash invalidates earlier runs."""
        import experiment

        experiment.run_experiment(tiny_config, tmp_path)
        calls = []
        original = experiment.run_point

        def counting(*args, **kwargs):
            calls.append(args[1:4])
            return original(*args, **kwargs)

        monkeypatch.setattr(experiment, "run_point", counting)
        experiment.run_experiment(tiny_config.model_copy(update={"seed": tiny_config.seed + 1}), tmp_path)
        assert calls == [(1, 0.0, 0.0)]

    def test_missing_regime_recorded_as_failure(self, tiny_config, tmp_path):
        """Far-end talk that never pauses leaves no noise-only frames for NRext."""
        from experiment import run_experiment

        scenario = tiny_config.scenario.model_copy(
            update={"farend_off_seconds": 0.0, "farend_offset_seconds": 0.0}
        )
        config = type(tiny_config)(
            **{**dict(tiny_config), "scenario": scenario, "algorithms": ["nrext_aec_pf", "mwf"]}
        )

        stats = run_experiment(config, tmp_path)
        assert stats["failed"] == 1
        assert stats["completed"] == 1
        rows = {r["algorithm"]: r for r in read_rows(tmp_path / "results.csv")}
        assert rows["nrext_aec_pf"]["status"] == "failed"
        assert rows["nrext_aec_pf"]["error"].startswith("MissingRegimeError")
        assert rows["mwf"]["status"] == "ok"

    def test_manifest_and_audio(self, tiny_config, tmp_path):
        """Manifest records seed and hash; audio is written on request."""
        from experiment import run_experiment

        config = tiny_config.model_copy(update={"write_audio": True})
        run_experiment(config, tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["seed"] == config.seed
        assert manifest["config_hash"] == config.config_hash()
        assert set(manifest["versions"]) == {"numpy", "scipy", "soundfile"}
        audio = tmp_path / "audio" / "layout1_snr+0_ser+0_mwf"
        assert sorted(p.name for p in audio.iterdir()) == [
            "enhanced.wav", "reference_mixture.wav", "reference_speech.wav"
        ]

    def test_stage_metrics_stored(self, tiny_config, tmp_path):
        """Per-stage metrics of cascades are kept in the ledger."""
        from experiment import run_experiment
        from results_store import ResultStore, RunKey

        run_experiment(tiny_config, tmp_path)
        stages = ResultStore(tmp_path / "runs.db").stage_metrics(RunKey(1, 0.0, 0.0, "aec_nr"))
        assert list(stages) == ["aec", "nr"]


@pytest.mark.integration
@pytest.mark.timeout(120)
class TestCommandLine:
    """End-to-end runs through main()."""

    def test_sweep_summary_and_exit_code(self, mock_env_vars, tmp_path):
        """A clean sweep exits 0 and leaves results, summary and manifest."""
        import main

        path = tmp_path / "sweep.yaml"
        path.write_text(
            "algorithms: [mwf]\nsnr_grid: [0.0]\nser_grid: [0.0]\nlayouts: [1, 2]\n" + FAST_SCENARIO
        )
        out = tmp_path / "out"
        assert main.main(["--config", str(path), "--out", str(out), "--seed", "3"]) == main.EXIT_OK
        for name in ("results.csv", "summary.csv", "manifest.json", "runs.db"):
            assert (out / name).exists()
        summary = read_rows(out / "summary.csv")
        assert len(summary) == 1
        assert summary[0]["count"] == "2"

    def test_failed_runs_exit_code(self, mock_env_vars, tmp_path):
        """Any failed run gives exit status 1."""
        import main

        path = tmp_path / "sweep.yaml"
        path.write_text(
            "algorithms: [nrext_aec_pf]\nsnr_grid: [0.0]\nser_grid: [0.0]\nlayouts: [1]\n"
            + FAST_SCENARIO.replace("farend_off_seconds: 0.6", "farend_off_seconds: 0.0")
            .replace("farend_offset_seconds: 0.3", "farend_offset_seconds: 0.0")
        )
        out = tmp_path / "out"
        assert main.main(["--config", str(path), "--out", str(out)]) == main.EXIT_FAILED_RUNS
        assert read_rows(out / "results.csv")[0]["status"] == "failed"

    @pytest.mark.slow
    @pytest.mark.timeout(300)
    def test_verify_flag(self, mock_env_vars, tmp_path):
        """--verify runs the full certificate suite and saves it."""
        import main

        assert main.main(["--verify", "--out", str(tmp_path)]) == main.EXIT_OK
        assert (tmp_path / "verification.csv").exists()


@pytest.mark.slow
@pytest.mark.integration
@pytest.mark.timeout(300)
class TestDeskScaleOrdering:
    """Qualitative ranking of the cascades on the default room."""

    def test_aec_nr_beats_mwf_and_modified_nr_aec(self):
        """10 s, SER -15 dB, SNR 0 dB, five layouts: AEC-NR leads by 1 dB."""
        from experiment import ExperimentConfig, run_point

        config = ExperimentConfig.from_yaml(
            None, algorithms=["mwf", "aec_nr", "nr_aec_mod"], snr_grid=[0.0], ser_grid=[-15.0]
        ).model_copy(update={"duration_seconds": 10.0})

        gains = {"mwf": [], "aec_nr": [], "nr_aec_mod": []}
        for layout in config.layouts:
            for row in run_point(config, layout, 0.0, -15.0, list(gains)):
                assert "error" not in row, row.get("error")
                gains[row["key"].algorithm].append(row["metrics"]["delta_ser_db"])

        mean = {name: float(np.mean(values)) for name, values in gains.items()}
        assert len(gains["aec_nr"]) == 5
        assert mean["aec_nr"] >= mean["nr_aec_mod"] + 1.0
        assert mean["aec_nr"] >= mean["mwf"] + 1.0
