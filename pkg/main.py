"""Command-line driver for the echo cancellation / noise reduction experiments."""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from config import get_settings, validate_config
from errors import InvalidInputError
from logger import get_logger, setup_logging

EXIT_OK = 0
EXIT_FAILED_RUNS = 1
EXIT_BAD_CONFIG = 2


def _float_list(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _env_seed(settings) -> Optional[int]:
    """AECNR_SEED when it is set explicitly; otherwise the sweep file decides."""
    return settings.seed if "seed" in settings.model_fields_set else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aecnr",
        description="Sweep integrated AEC/NR algorithms over simulated scenarios.",
    )
    parser.add_argument("--config", type=Path, default=None, help="experiment YAML (default: config/experiment.yaml)")
    parser.add_argument("--out", type=Path, default=None, help="output directory (default: AECNR_RESULTS_DIR)")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--algorithms", type=lambda s: [x.strip() for x in s.split(",") if x.strip()],
                        default=None, help="comma-separated algorithm names")
    parser.add_argument("--snr-grid", type=_float_list, default=None, help="comma-separated input SNRs in dB")
    parser.add_argument("--ser-grid", type=_float_list, default=None, help="comma-separated input SERs in dB")
    parser.add_argument("--layouts", type=lambda s: [int(x) for x in s.split(",") if x.strip()],
                        default=None, help="comma-separated source layouts (1..5)")
    duration = parser.add_mutually_exclusive_group()
    duration.add_argument("--duration", type=float, default=None, help="signal length in seconds")
    duration.add_argument("--desk", action="store_true", help="use the short desk-scale duration")
    parser.add_argument("--workers", type=int, default=None, help="parallel sweep points (default: AECNR_WORKERS)")
    parser.add_argument("--verify", action="store_true", help="run the numerical certificate suite")
    parser.add_argument("--write-audio", action="store_true", help="write enhanced WAV files")
    parser.add_argument("--cache-correlations", action="store_true", help="store correlation sets and filters")
    parser.add_argument("--summarize", type=Path, default=None, metavar="CSV_DIR",
                        help="aggregate an existing results.csv and exit")
    return parser


def run(args: argparse.Namespace) -> int:
    """Run the requested action; returns the exit status."""
    from experiment import ExperimentConfig, run_experiment, run_verification, summarize

    logger = get_logger("aecnr")
    settings = get_settings()

    if args.summarize is not None:
        logger.info(f"Summarizing {args.summarize}")
        try:
            rows = summarize(args.summarize)
        except InvalidInputError as e:
            logger.error(f"Nothing to summarize: {e}")
            return EXIT_BAD_CONFIG
        logger.info(f"{len(rows)} aggregate rows written")
        return EXIT_OK

    out_dir = args.out or settings.results_dir

    logger.info("=" * 50)
    logger.info("Starting AEC/NR experiment")
    logger.info("=" * 50)

    logger.info("1. Loading configuration...")
    try:
        config = ExperimentConfig.from_yaml(
            args.config,
            seed=args.seed if args.seed is not None else _env_seed(settings),
            algorithms=args.algorithms,
            snr_grid=args.snr_grid,
            ser_grid=args.ser_grid,
            layouts=args.layouts,
        )
        algorithm_overrides = {
            name: getattr(settings, name)
            for name in ("rank_tolerance", "vad_threshold_db")
            if name in settings.model_fields_set
        }
        update = {"algorithm": config.algorithm.model_copy(update=algorithm_overrides)}
        if args.desk:
            update["duration_seconds"] = config.scenario.desk_duration_seconds
        elif args.duration is not None:
            update["duration_seconds"] = args.duration
        if args.write_audio:
            update["write_audio"] = True
        if args.cache_correlations:
            update["cache_correlations"] = True
        config = ExperimentConfig(**{**dict(config), **update})
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_BAD_CONFIG
    logger.info(f"Config hash {config.config_hash()[:12]}, seed {config.seed}")

    if args.verify:
        logger.info("2. Running verification suites...")
        if run_verification(out_dir):
            logger.info("All certificates passed")
            return EXIT_OK
        logger.error("Verification failed")
        return EXIT_FAILED_RUNS

    status = EXIT_OK
    logger.info("2. Running sweep...")
    stats = run_experiment(config, out_dir, args.workers or settings.workers)

    logger.info("3. Summarizing...")
    if stats["completed"]:
        summarize(out_dir)
    if stats["failed"]:
        logger.warning(f"{stats['failed']} run(s) failed, see results.csv")
        status = EXIT_FAILED_RUNS
    return status


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    # Load environment variables
    load_dotenv()

    # Validate configuration using Pydantic
    try:
        validate_config()
        settings = get_settings()
    except ValueError as e:
        print(f"Configuration error: {e}")
        return EXIT_BAD_CONFIG

    # Setup logging
    setup_logging(
        log_level=settings.log_level,
        log_dir=settings.log_dir,
    )
    args = build_parser().parse_args(argv)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
