"""Logging for the lab: rotating files in the main process, a queue for sweep workers."""

import logging
import multiprocessing
import sys
from contextlib import contextmanager
from logging.handlers import QueueHandler, QueueListener, RotatingFileHandler
from pathlib import Path
from typing import Callable, Iterator, Tuple

ROOT_LOGGER = "aecnr"
LOG_FORMAT = "%(asctime)s | %(levelname)-8s | %(processName)s | %(name)s | %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def _rotating(
    path: Path,
    level: int,
    max_bytes: int,
    backup_count: int,
    formatter: logging.Formatter,
) -> RotatingFileHandler:
    handler = RotatingFileHandler(path, maxBytes=max_bytes, backupCount=backup_count, encoding="utf-8")
    handler.setFormatter(formatter)
    handler.setLevel(level)
    return handler


def setup_logging(
    name: str = ROOT_LOGGER,
    log_dir: Path = Path("logs"),
    log_level: str = "INFO",
    max_bytes: int = 5 * 1024 * 1024,  # 5 MB
    backup_count: int = 3,
    console_output: bool = True,
) -> logging.Logger:
    """
    Configure the lab logger: ``<name>.log``, ``<name>_errors.log`` and stdout.

    Calling it again for a configured logger is a no-op.

    Args:
        name: Root logger name; module loggers are ``<name>.<module>``
        log_dir: Directory for log files
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR)
        max_bytes: Max size per log file before rotation
        backup_count: Number of rotated files to keep
        console_output: Whether to also log to stdout

    Returns:
        Configured logger instance
    """
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)

    logger = logging.getLogger(name)
    if logger.handlers:
        return logger

    level = getattr(logging, log_level.upper(), logging.INFO)
    logger.setLevel(level)
    formatter = logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT)

    logger.addHandler(_rotating(log_dir / f"{name}.log", logging.DEBUG, max_bytes, backup_count, formatter))
    # Failed sweep points and config errors
    logger.addHandler(_rotating(log_dir / f"{name}_errors.log", logging.ERROR, max_bytes, backup_count, formatter))

    if console_output:
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(formatter)
        console_handler.setLevel(level)
        logger.addHandler(console_handler)

    logger.propagate = False
    return logger


def get_logger(name: str = ROOT_LOGGER) -> logging.Logger:
    """Return a logger in the ``aecnr`` hierarchy (handlers come from the root)."""
    return logging.getLogger(name)


def _attach_queue(queue, name: str, level: int) -> None:
    """Pool initializer: the worker's records go to ``queue`` instead of inherited handlers."""
    logger = logging.getLogger(name)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.addHandler(QueueHandler(queue))
    logger.setLevel(level)
    logger.propagate = False


@contextmanager
def worker_logging(name: str = ROOT_LOGGER) -> Iterator[Tuple[Callable, tuple]]:
    """
    Forward records of process-pool workers to this process's handlers.

    Yields ``(initializer, initargs)`` for ``ProcessPoolExecutor``. Only the
    main process writes the rotating files; the listener drains the queue
    when the block exits.
    """
    logger = logging.getLogger(name)
    queue = multiprocessing.Queue(-1)
    listener = QueueListener(queue, *logger.handlers, respect_handler_level=True)
    listener.start()
    try:
        yield _attach_queue, (queue, name, logger.getEffectiveLevel())
    finally:
        listener.stop()
        queue.close()
