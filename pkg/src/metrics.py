"""Intelligibility-weighted SNR/SER improvement and speech distortion."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from config_loader import get_band_importance, load_yaml
from errors import InvalidInputError
from logger import get_logger

logger = get_logger("aecnr.metrics")

THIRD_OCTAVE = 2.0 ** (1.0 / 6.0)


@dataclass
class ComponentSignals:
    """Time-domain desired speech, noise and echo at one channel."""

    s: np.ndarray
    n: np.ndarray
    e: np.ndarray

    @property
    def mixture(self) -> np.ndarray:
        return self.s + self.n + self.e

    def scaled(self, gain: float) -> "ComponentSignals":
        return ComponentSignals(gain * self.s, gain * self.n, gain * self.e)


@dataclass
class BandSpec:
    """One-third-octave bands with importance weights."""

    centers: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    weights: np.ndarray
    version: int = 1
    standard: str = ""

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0):
            raise InvalidInputError("band importance weights must be non-negative")
        if np.any(np.diff(self.centers) <= 0) or np.any(self.lower[1:] < self.upper[:-1] - 1e-9):
            raise InvalidInputError("bands must be ordered and non-overlapping")

    def __len__(self) -> int:
        return len(self.centers)

    @classmethod
    def from_table(cls, table: Optional[Dict] = None) -> "BandSpec":
        """
        Build from a mapping with a ``bands`` list of {center, weight}.

        Nominal centers are snapped to the exact base-two series 1000 * 2^(n/3)
        so adjacent edges coincide.
        """
        table = table if table is not None else get_band_importance()
        rows = table.get("bands") or []
        if not rows:
            raise InvalidInputError("band table has no bands")
        nominal = np.array([float(row["center"]) for row in rows])
        exact = 1000.0 * 2.0 ** (np.round(3.0 * np.log2(nominal / 1000.0)) / 3.0)
        return cls(
            centers=nominal,
            lower=exact / THIRD_OCTAVE,
            upper=exact * THIRD_OCTAVE,
            weights=[float(row["weight"]) for row in rows],
            version=int(table.get("version", 1)),
            standard=str(table.get("standard", "")),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BandSpec":
        return cls.from_table(load_yaml(path))

    def effective(self, sample_rate: int) -> "BandSpec":
        """Bands clipped at Nyquist; bands entirely above it get zero weight."""
        nyquist = sample_rate / 2.0
        upper = np.minimum(self.upper, nyquist)
        lower = np.minimum(self.lower, nyquist)
        weights = np.where(lower < nyquist, self.weights, 0.0)
        return BandSpec(self.centers, lower, upper, weights, self.version, self.standard)

    @property
    def bandwidths(self) -> np.ndarray:
        return self.upper - self.lower


def _band_signals(x: np.ndarray, bands: BandSpec, sample_rate: int) -> np.ndarray:
    """Zero-phase FFT-masked band signals, shape (num_bands, N)."""
    n = x.shape[0]
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    nyquist = sample_rate / 2.0
    out = np.zeros((len(bands), n))
    for b, (lo, hi) in enumerate(zip(bands.lower, bands.upper)):
        mask = (freqs >= lo) & ((freqs < hi) | ((hi >= nyquist) & (freqs <= hi)))
        if mask.any():
            out[b] = np.fft.irfft(spectrum * mask, n=n)
    return out


def band_powers(
    signal,
    bands: Optional[BandSpec] = None,
    sample_rate: int = 16000,
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Power of ``signal`` in every band: the sum of squared band-filtered samples.

    Args:
        signal: 1-D time signal
        bands: band table; the shipped importance table by default
        sample_rate: Hz
        mask: optional boolean sample mask restricting the sum
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError(f"band_powers expects a 1-D signal, got {x.shape}")
    bands = (bands or BandSpec.from_table()).effective(sample_rate)
    if x.size == 0 or not np.any(x):
        return np.zeros(len(bands))
    filtered = _band_signals(x, bands, sample_rate)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise InvalidInputError(f"mask {mask.shape} does not match signal {x.shape}")
        filtered = filtered[:, mask]
    return np.sum(filtered ** 2, axis=1)


@dataclass
class MetricsReport:
    """
    Weighted improvements in dB plus per-band values.

    Per-band arrays hold NaN for bands where one of the powers is zero; those
    bands are also left out of the weighted scalars.
    """

    delta_snr_db: float
    delta_ser_db: float
    sd_db: float
    snr_in: np.ndarray = field(repr=False, default=None)
    snr_out: np.ndarray = field(repr=False, default=None)
    ser_in: np.ndarray = field(repr=False, default=None)
    ser_out: np.ndarray = field(repr=False, default=None)
    sd_bands: np.ndarray = field(repr=False, default=None)
    scenario: str = ""
    algorithm: str = ""
    stage: str = ""

    def to_row(self) -> Dict[str, float]:
        return {
            "delta_snr_db": float(self.delta_snr_db),
            "delta_ser_db": float(self.delta_ser_db),
            "sd_db": float(self.sd_db),
        }


def _db_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Power ratio in dB; NaN where either power is not positive."""
    num, den = np.asarray(num, dtype=float), np.asarray(den, dtype=float)
    valid = (num > 0) & (den > 0)
    ratio = np.divide(num, den, out=np.ones(np.broadcast(num, den).shape), where=valid)
    return np.where(valid, 10.0 * np.log10(ratio), np.nan)


def _weighted(values: np.ndarray, weights: np.ndarray, usable: np.ndarray, name: str) -> float:
    """Weighted sum over usable bands, renormalized to the usable weight mass."""
    w = np.where(usable, weights, 0.0)
    total = w.sum()
    dropped = int(np.count_nonzero((weights > 0) & ~usable))
    if total <= 0:
        logger.warning(f"{name}: no band with non-zero power, reporting 0 dB")
        return 0.0
    if dropped:
        logger.warning(f"{name}: {dropped} zero-power band(s) excluded")
    return float(np.sum(w * np.where(usable, values, 0.0)) / total)


def _trim(x: np.ndarray, trim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if trim <= 0:
        return x
    if x.shape[0] <= 2 * trim:
        raise InvalidInputError(f"signal of {x.shape[0]} samples too short to trim {trim} per side")
    return x[trim:-trim]


def improvement_metrics(
    inputs: ComponentSignals,
    outputs: ComponentSignals,
    bands: Optional[BandSpec] = None,
    sample_rate: int = 16000,
    trim: int = 512,
    speech_mask: Optional[np.ndarray] = None,
    scenario: str = "",
    algorithm: str = "",
    stage: str = "",
) -> MetricsReport:
    """
    Band-importance-weighted SNR and SER improvements and speech distortion.

    ``trim`` samples are dropped at both ends of every signal. With
    ``speech_mask`` (boolean, one entry per untrimmed sample) the speech
    distortion uses speech-active samples only.
    """
    bands = (bands or BandSpec.from_table()).effective(sample_rate)
    n = len(inputs.s)
    for comp in (inputs.n, inputs.e, outputs.s, outputs.n, outputs.e):
        if len(comp) != n:
            raise InvalidInputError("component signals differ in length")

    def powers(x: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
        return band_powers(_trim(x, trim), bands, sample_rate, mask)

    ps_in, pn_in, pe_in = powers(inputs.s), powers(inputs.n), powers(inputs.e)
    ps_out, pn_out, pe_out = powers(outputs.s), powers(outputs.n), powers(outputs.e)

    snr_in, snr_out = _db_ratio(ps_in, pn_in), _db_ratio(ps_out, pn_out)
    ser_in, ser_out = _db_ratio(ps_in, pe_in), _db_ratio(ps_out, pe_out)

    if speech_mask is not None:
        mask = _trim(np.asarray(speech_mask, dtype=float), trim) > 0.5
        sd_num, sd_den = powers(outputs.s, mask), powers(inputs.s, mask)
    else:
        sd_num, sd_den = ps_out, ps_in
    sd_bands = _db_ratio(sd_num, sd_den)

    positive = lambda *ps: np.logical_and.reduce([p > 0 for p in ps])  # noqa: E731
    report = MetricsReport(
        delta_snr_db=_weighted(
            snr_out - snr_in, bands.weights, positive(ps_in, pn_in, ps_out, pn_out), "SNR"
        ),
        delta_ser_db=_weighted(
            ser_out - ser_in, bands.weights, positive(ps_in, pe_in, ps_out, pe_out), "SER"
        ),
        sd_db=_weighted(sd_bands, bands.weights, positive(sd_num, sd_den), "SD"),
        snr_in=snr_in,
        snr_out=snr_out,
        ser_in=ser_in,
        ser_out=ser_out,
        sd_bands=sd_bands,
        scenario=scenario,
        algorithm=algorithm,
        stage=stage,
    )
    logger.debug(
        f"{algorithm or 'metrics'} {stage}: dSNR={report.delta_snr_db:.2f} dB "
        f"dSER={report.delta_ser_db:.2f} dB SD={report.sd_db:.2f} dB"
    )
    return report


def sample_activity(frame_activity: np.ndarray, hop: int, window_length: int, num_samples: int) -> np.ndarray:
    """Boolean sample mask covering every active frame."""
    mask = np.zeros(num_samples, dtype=bool)
    for k in np.flatnonzero(np.asarray(frame_activity, dtype=bool)):
        mask[k * hop:k * hop + window_length] = True
    return mask
