"""
Batch sweeps over layouts, input SNR/SER and algorithms.

Each sweep point (layout, SNR, SER) synthesizes one scenario and runs every
requested algorithm on it. Results go to the SQLite ledger; ``results.csv`` is
exported from the ledger in key order so identical sweeps give identical files.
"""

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy
import soundfile
from pydantic import BaseModel, Field, field_validator, model_validator

from cascade import AlgorithmSettings, prepare_inputs, run_cascade, stage_metrics
from config_loader import get_experiment_defaults, load_yaml
from errors import DegenerateScenarioError, InvalidInputError, MissingRegimeError
from filters import BENCHMARKED, AlgorithmKind
from logger import get_logger, worker_logging
from metrics import BandSpec, sample_activity
from results_store import ResultStore, RunKey
from room_sim import NUM_LAYOUTS, RoomConfig, ScenarioConfig, synthesize_scenario
from signals import write_wav
from stft import StftConfig
from verification import all_passed, certificate_suite, format_certificate

logger = get_logger("aecnr.experiment")

METRIC_FIELDS = ("delta_snr_db", "delta_ser_db", "sd_db")
RECOVERABLE = (MissingRegimeError, DegenerateScenarioError, InvalidInputError)


class ExperimentConfig(BaseModel):
    """Sweep definition plus the room, scenario, STFT and algorithm settings."""

    algorithms: List[AlgorithmKind] = Field(default_factory=lambda: list(BENCHMARKED))
    snr_grid: List[float] = Field(default_factory=lambda: [-15.0, 0.0, 15.0])
    ser_grid: List[float] = Field(default_factory=lambda: [-15.0, 0.0, 15.0])
    layouts: List[int] = Field(default_factory=lambda: list(range(1, NUM_LAYOUTS + 1)))
    seed: int = Field(default=2024, ge=0)
    duration_seconds: Optional[float] = Field(default=None, gt=0.0)
    write_audio: bool = False
    cache_correlations: bool = False
    stft: StftConfig = Field(default_factory=StftConfig)
    algorithm: AlgorithmSettings = Field(default_factory=AlgorithmSettings)
    room: RoomConfig = Field(default_factory=RoomConfig.from_defaults)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig.from_defaults)

    @field_validator("algorithms")
    @classmethod
    def validate_algorithms(cls, v: List[AlgorithmKind]) -> List[AlgorithmKind]:
        if not v:
            raise ValueError("at least one algorithm is required")
        if AlgorithmKind.NR_AEC in v:
            raise ValueError("nr_aec exists in closed form only; sweep nr_aec_mod instead")
        if len(set(v)) != len(v):
            raise ValueError("algorithms must be unique")
        return v

    @field_validator("snr_grid", "ser_grid", "layouts")
    @classmethod
    def validate_grid(cls, v: List) -> List:
        if not v:
            raise ValueError("grids must not be empty")
        return v

    @field_validator("layouts")
    @classmethod
    def validate_layouts(cls, v: List[int]) -> List[int]:
        bad = [k for k in v if not 1 <= k <= NUM_LAYOUTS]
        if bad:
            raise ValueError(f"layouts must be in 1..{NUM_LAYOUTS}, got {bad}")
        return v

    @model_validator(mode="after")
    def check_rates(self) -> "ExperimentConfig":
        if self.room.sample_rate != self.stft.sample_rate:
            raise ValueError(
                f"room sample rate {self.room.sample_rate} != STFT sample rate {self.stft.sample_rate}"
            )
        return self

    @classmethod
    def from_yaml(cls, path: Optional[Union[str, Path]] = None, **overrides) -> "ExperimentConfig":
        """
        Load the sweep file; ``room`` and ``scenario`` sections override the
        defaults from room.yaml and scenario.yaml.
        """
        data: Dict[str, Any] = dict(load_yaml(path) if path else get_experiment_defaults())
        data["room"] = RoomConfig.from_defaults(**(data.get("room") or {}))
        data["scenario"] = ScenarioConfig.from_defaults(**(data.get("scenario") or {}))
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def points(self) -> List[Tuple[int, float, float]]:
        return [
            (layout, snr, ser)
            for layout in self.layouts
            for snr in self.snr_grid
            for ser in self.ser_grid
        ]

    def scenario_for(self, layout: int, snr_in_db: float, ser_in_db: float) -> ScenarioConfig:
        update: Dict[str, Any] = {
            "layout": layout,
            "snr_in_db": snr_in_db,
            "ser_in_db": ser_in_db,
            "seed": self.seed,
        }
        if self.duration_seconds is not None:
            update["duration_seconds"] = self.duration_seconds
        return self.scenario.model_copy(update=update)

    def room_for_seed(self) -> RoomConfig:
        return self.room.model_copy(update={"seed": self.seed})


def run_point(
    config: ExperimentConfig,
    layout: int,
    snr_in_db: float,
    ser_in_db: float,
    algorithms: Sequence[str],
    out_dir: Optional[str] = None,
) -> List[Dict[str, Any]]:
    """
    Run ``algorithms`` on one scenario.

    Returns one dict per algorithm with the run key, final metrics and per-stage
    metrics, or the error text of a recoverable failure.
    """
    keys = [RunKey(layout, snr_in_db, ser_in_db, name) for name in algorithms]
    try:
        bundle = synthesize_scenario(config.scenario_for(layout, snr_in_db, ser_in_db), config.room_for_seed())
        inputs = prepare_inputs(bundle, config.stft, config.algorithm)
    except RECOVERABLE as e:
        logger.error(f"Scenario layout {layout}, SNR {snr_in_db:+g}, SER {ser_in_db:+g} failed: {e}", exc_info=True)
        return [{"key": key, "error": f"{type(e).__name__}: {e}"} for key in keys]

    bands = BandSpec.from_table()
    speech_mask = None
    if config.algorithm.speech_active_sd:
        activity = inputs.vads.speech
        if activity.ndim == 2:
            activity = activity.any(axis=1)
        speech_mask = sample_activity(
            activity, config.stft.hop, config.stft.window_length, bundle.num_samples
        )

    rows = []
    for key in keys:
        try:
            cache_dir = None
            if out_dir and config.cache_correlations:
                cache_dir = Path(out_dir) / "cache" / key.slug
            result = run_cascade(key.algorithm, None, config.stft, config.algorithm, inputs, cache_dir)
            reports = stage_metrics(result, config.stft, bands, speech_mask)
        except RECOVERABLE as e:
            logger.error(f"Run {key.text} failed: {e}", exc_info=True)
            rows.append({"key": key, "error": f"{type(e).__name__}: {e}"})
            continue

        final = list(reports.values())[-1]
        rows.append({
            "key": key,
            "metrics": final.to_row(),
            "stages": {name: report.to_row() for name, report in reports.items()},
        })
        if out_dir and config.write_audio:
            audio = Path(out_dir) / "audio" / key.slug
            fs = bundle.sample_rate
            write_wav(audio / "enhanced.wav", result.enhanced, fs)
            write_wav(audio / "reference_mixture.wav", result.reference_input.mixture, fs)
            write_wav(audio / "reference_speech.wav", result.reference_input.s, fs)
    return rows


def write_manifest(config: ExperimentConfig, out_dir: Path) -> Path:
    """Seed, config hash, resolved config and library versions."""
    manifest = {
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "config": config.model_dump(mode="json"),
        "versions": {
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "soundfile": soundfile.__version__,
        },
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run_experiment(
    config: ExperimentConfig,
    out_dir: Union[str, Path],
    workers: int = 1,
) -> Dict[str, Any]:
    """
    Sweep every (layout, SNR, SER) point and every algorithm.

    Completed runs in ``runs.db`` with the same config hash are skipped, so an
    interrupted sweep resumes where it stopped. Returns the ledger statistics.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = ResultStore(out_dir / "runs.db")
    config_hash = config.config_hash()
    write_manifest(config, out_dir)

    jobs = []
    for layout, snr, ser in config.points():
        pending = [
            kind.value for kind in config.algorithms
            if not store.is_run_done(RunKey(layout, snr, ser, kind.value), config_hash)
        ]
        if pending:
            jobs.append((layout, snr, ser, pending))
    total = len(config.points()) * len(config.algorithms)
    logger.info(f"Sweep: {len(jobs)} scenario(s) to run, {total} runs in total")

    def record(rows: List[Dict[str, Any]]):
        for row in rows:
            if "error" in row:
                store.record_failure(row["key"], row["error"], config_hash)
            else:
                store.record_run(row["key"], row["metrics"], row["stages"], config_hash)

    if workers <= 1:
        for i, (layout, snr, ser, pending) in enumerate(jobs, 1):
            logger.info(f"[{i}/{len(jobs)}] layout {layout}, SNR {snr:+g} dB, SER {ser:+g} dB")
            record(run_point(config, layout, snr, ser, pending, str(out_dir)))
    else:
        with worker_logging() as (initializer, initargs), ProcessPoolExecutor(
            max_workers=workers, initializer=initializer, initargs=initargs
        ) as pool:
            futures = [
                pool.submit(run_point, config, layout, snr, ser, pending, str(out_dir))
                for layout, snr, ser, pending in jobs
            ]
            for i, future in enumerate(futures, 1):
                record(future.result())
                logger.info(f"[{i}/{len(jobs)}] scenario done")

    store.export_csv(out_dir / "results.csv")
    stats = store.get_stats()
    logger.info(f"Sweep finished: {stats['completed']} ok, {stats['failed']} failed")
    return stats


def run_verification(
    out_dir: Optional[Union[str, Path]] = None,
    seeds: Sequence[int] = range(20),
    sizes: Optional[Sequence[Tuple[int, int]]] = None,
) -> bool:
    """Run the randomized identity checks, print the certificate, optionally save it."""
    results = certificate_suite(sizes, seeds)
    print(format_certificate(results))
    if out_dir is not None:
        path = Path(out_dir) / "verification.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = [r.to_row() for r in results]
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return all_passed(results)


def summarize(csv_dir: Union[str, Path]) -> List[Dict[str, Any]]:
    """
    Mean and standard deviation of every metric across layouts per
    (algorithm, SNR, SER); writes ``summary.csv`` next to ``results.csv``.

    Raises:
        InvalidInputError: no completed result rows.
    """
    csv_dir = Path(csv_dir)
    source = csv_dir if csv_dir.is_file() else csv_dir / "results.csv"
    if not source.exists():
        raise InvalidInputError(f"no results file at {source}")
    with open(source, newline="", encoding="utf-8") as f:
        rows = [row for row in csv.DictReader(f) if row.get("status", "ok") == "ok"]
    if not rows:
        raise InvalidInputError(f"{source} has no completed runs to summarize")

    groups: Dict[Tuple[str, float, float], List[Dict[str, str]]] = {}
    for row in rows:
        key = (row["algorithm"], float(row["snr_in_db"]), float(row["ser_in_db"]))
        groups.setdefault(key, []).append(row)

    summary = []
    for (algorithm, snr, ser) in sorted(groups):
        group = groups[(algorithm, snr, ser)]
        out: Dict[str, Any] = {"algorithm": algorithm, "snr_in_db": snr, "ser_in_db": ser, "count": len(group)}
        for name in METRIC_FIELDS:
            values = np.array([float(r[name]) for r in group])
            out[f"{name}_mean"] = float(values.mean())
            out[f"{name}_std"] = float(values.std())
        summary.append(out)

    target = source.parent / "summary.csv"
    with open(target, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(summary[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(summary)
    logger.info(f"Summary of {len(rows)} rows written to {target}")
    return summary
