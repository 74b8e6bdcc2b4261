"""
Source signals for scenario synthesis.

WAV corpus input/output through soundfile (polyphase resampling to the lab
rate) and a seeded generator of speech-like modulated noise, so scenarios can be
built without any corpus on disk.
"""

from math import gcd
from pathlib import Path
from typing import Optional, Union

import numpy as np
import soundfile as sf
from scipy import signal as sps

from errors import InvalidInputError
from logger import get_logger

logger = get_logger("aecnr.signals")

SYLLABIC_CUTOFF_HZ = 8.0
SPECTRAL_TILT_POLE = 0.9


def read_wav(path: Union[str, Path], sample_rate: int, min_samples: int = 0) -> np.ndarray:
    """
    Read a mono WAV file and resample it to ``sample_rate``.

    Raises:
        InvalidInputError: missing file, more than one channel, or fewer than
            ``min_samples`` samples after resampling.
    """
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"audio file not found: {path}")
    data, file_rate = sf.read(str(path), dtype="float64", always_2d=True)
    if data.shape[1] != 1:
        raise InvalidInputError(f"{path.name} has {data.shape[1]} channels, expected mono")
    x = data[:, 0]
    if file_rate != sample_rate:
        g = gcd(int(file_rate), int(sample_rate))
        x = sps.resample_poly(x, sample_rate // g, file_rate // g)
        logger.debug(f"Resampled {path.name} from {file_rate} Hz to {sample_rate} Hz")
    if x.size < min_samples:
        raise InvalidInputError(
            f"{path.name} has {x.size} samples, scenario needs {min_samples}"
        )
    return x


def write_wav(path: Union[str, Path], data: np.ndarray, sample_rate: int) -> Path:
    """Write (N,) or (N, C) float samples as a 32-bit float WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), np.asarray(data, dtype=np.float32), sample_rate, subtype="FLOAT")
    return path


def activity_mask(
    num_samples: int,
    sample_rate: int,
    on_seconds: float,
    off_seconds: float,
    offset_seconds: float = 0.0,
) -> np.ndarray:
    """On/off talk pattern; inactive before ``offset_seconds``."""
    if on_seconds <= 0 or off_seconds < 0:
        raise InvalidInputError("activity pattern needs on > 0 and off >= 0 seconds")
    t = np.arange(num_samples) / sample_rate - offset_seconds
    mask = np.mod(t, on_seconds + off_seconds) < on_seconds
    mask[t < 0] = False
    return mask


def speech_like(
    num_samples: int,
    sample_rate: int,
    rng: np.random.Generator,
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Speech-like noise: low-frequency tilted noise under a syllabic-rate envelope.

    Normalized to unit power over its active samples; zero where ``mask`` is False.
    """
    carrier = sps.lfilter([1.0], [1.0, -SPECTRAL_TILT_POLE], rng.standard_normal(num_samples))
    sos = sps.butter(2, SYLLABIC_CUTOFF_HZ, fs=sample_rate, output="sos")
    envelope = np.abs(sps.sosfilt(sos, rng.standard_normal(num_samples)))
    envelope = 0.1 + envelope / max(float(envelope.max()), np.finfo(float).tiny)
    out = carrier * envelope
    if mask is not None:
        out = np.where(mask, out, 0.0)
    active = out[out != 0.0]
    if active.size:
        out = out / np.sqrt(np.mean(active ** 2))
    return out


def babble(
    num_samples: int,
    sample_rate: int,
    rng: np.random.Generator,
    talkers: int = 6,
) -> np.ndarray:
    """Sum of independent ungated speech-like talkers, unit power."""
    if talkers < 1:
        raise InvalidInputError("babble needs at least one talker")
    out = sum(speech_like(num_samples, sample_rate, rng) for _ in range(talkers))
    return out / np.sqrt(np.mean(out ** 2))


def white_noise(num_samples: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(num_samples)
