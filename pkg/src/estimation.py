"""
Regime-gated correlation estimation.

Ideal voice activity from ground-truth components splits the frames into four
regimes of (desired speech, far-end speech in the echo). Outer products are
averaged per frequency bin and regime over the whole signal; speech and
speech-plus-echo correlations come from rank-constrained GEVD subtraction of
two regimes.
"""

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from containers import load_arrays, save_arrays
from errors import InvalidInputError, MissingRegimeError
from linalg_core import RankPolicy, gevd_lowrank_subtract, map_bins
from logger import get_logger
from room_sim import ScenarioBundle
from stft import StftConfig, StftTensor, analyze

logger = get_logger("aecnr.estimation")

DEFAULT_VAD_THRESHOLD_DB = 40.0


class Regime(IntEnum):
    """Joint activity of desired speech (s) and far-end speech in the echo (e^s)."""

    SPEECH_ECHO = 0  # s=1, e^s=1
    SPEECH_ONLY = 1  # s=1, e^s=0
    ECHO_ONLY = 2  # s=0, e^s=1
    NOISE_ONLY = 3  # s=0, e^s=0

    @property
    def speech_active(self) -> bool:
        return self in (Regime.SPEECH_ECHO, Regime.SPEECH_ONLY)

    @property
    def echo_active(self) -> bool:
        return self in (Regime.SPEECH_ECHO, Regime.ECHO_ONLY)

    @classmethod
    def from_flags(cls, speech: bool, echo: bool) -> "Regime":
        return cls(2 * (not speech) + (not echo))

    def __str__(self) -> str:
        return f"(s={int(self.speech_active)}, e^s={int(self.echo_active)})"


@dataclass
class VadTrack:
    """Ideal VAD decisions per frame, shape (K,), or per frame and bin, (K, F)."""

    speech: np.ndarray
    farend: np.ndarray
    threshold_db: float = DEFAULT_VAD_THRESHOLD_DB

    def __post_init__(self):
        self.speech = np.asarray(self.speech, dtype=bool)
        self.farend = np.asarray(self.farend, dtype=bool)
        if self.speech.shape != self.farend.shape:
            raise InvalidInputError(
                f"VAD shapes differ: {self.speech.shape} vs {self.farend.shape}"
            )

    @property
    def num_frames(self) -> int:
        return self.speech.shape[0]

    @property
    def per_bin(self) -> bool:
        return self.speech.ndim == 2

    def regimes(self) -> np.ndarray:
        """Regime code of every frame (or frame and bin)."""
        return 2 * (~self.speech).astype(int) + (~self.farend).astype(int)

    def regime_counts(self) -> Dict[Regime, int]:
        codes = self.regimes()
        return {regime: int(np.count_nonzero(codes == regime)) for regime in Regime}


@dataclass
class SpectralCorrelationSet:
    """
    Per-bin, per-regime sums of outer products x y^H and their frame counts.

    ``sums`` has shape (4, F, D, E) indexed by ``Regime``; ``counts`` (4, F).
    Reported matrices are sums / counts.
    """

    sums: np.ndarray
    counts: np.ndarray
    hermitian: bool = True
    label: str = ""

    @property
    def num_bins(self) -> int:
        return self.sums.shape[1]

    @property
    def dimension(self) -> Tuple[int, int]:
        return self.sums.shape[2], self.sums.shape[3]

    @property
    def num_frames(self) -> int:
        return int(self.counts[:, 0].sum())

    def has(self, regime: Regime) -> bool:
        return bool(np.all(self.counts[regime] > 0))

    def missing_regimes(self) -> List[Regime]:
        return [regime for regime in Regime if not self.has(regime)]

    def matrix(self, regime: Regime, consumer: Optional[str] = None) -> np.ndarray:
        """Mean outer product of ``regime`` for every bin, shape (F, D, E)."""
        if not self.has(regime):
            raise MissingRegimeError(regime, consumer)
        mean = self.sums[regime] / self.counts[regime][:, None, None]
        if self.hermitian:
            mean = 0.5 * (mean + np.conj(np.swapaxes(mean, -1, -2)))
        return mean

    def save(self, path: Union[str, Path]) -> Path:
        return save_arrays(
            path,
            "spectral_correlation_set",
            {"sums": self.sums, "counts": self.counts},
            {"hermitian": self.hermitian, "label": self.label},
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SpectralCorrelationSet":
        kind, metadata, arrays = load_arrays(path)
        if kind != "spectral_correlation_set":
            raise InvalidInputError(f"{path} holds '{kind}', not a correlation set")
        return cls(arrays["sums"], arrays["counts"], metadata["hermitian"], metadata["label"])


def ideal_vad(
    signal,
    cfg: StftConfig,
    threshold_db: float = DEFAULT_VAD_THRESHOLD_DB,
    per_bin: bool = False,
) -> np.ndarray:
    """
    Oracle activity of a ground-truth component.

    A frame is active iff its windowed energy exceeds the loudest frame's energy
    minus ``threshold_db``. Multichannel input is pooled. With ``per_bin`` the
    decision is taken per frequency bin, shape (K, F).
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if per_bin:
        energy = np.sum(np.abs(analyze(x, cfg).values) ** 2, axis=-1)
        peak = energy.max(axis=0, keepdims=True)
        return (energy > peak * 10 ** (-threshold_db / 10)) & (peak > 0)

    num_frames = cfg.num_frames(x.shape[0])
    if num_frames < 1:
        raise InvalidInputError(f"signal of {x.shape[0]} samples is shorter than one window")
    frames = sliding_window_view(x, cfg.window_length, axis=0)[:: cfg.hop][:num_frames]
    energy = np.sum((frames * cfg.window()) ** 2, axis=(1, 2))
    peak = float(energy.max())
    if peak <= 0:
        return np.zeros(num_frames, dtype=bool)
    return energy > peak * 10 ** (-threshold_db / 10)


def ideal_vads(
    bundle: ScenarioBundle,
    cfg: StftConfig,
    threshold_db: float = DEFAULT_VAD_THRESHOLD_DB,
    farend_reference: str = "echo",
    per_bin: bool = False,
) -> VadTrack:
    """
    VAD_s from s and VAD_{e^s} from e^s at the reference microphone.

    ``farend_reference="loudspeaker"`` takes far-end activity from the
    loudspeaker speech feeds instead, for scenarios whose echo path is silent.
    """
    ref = bundle.reference_mic
    speech = ideal_vad(bundle.s[:, ref], cfg, threshold_db, per_bin)
    if farend_reference == "echo":
        farend = ideal_vad(bundle.e_s[:, ref], cfg, threshold_db, per_bin)
    elif farend_reference == "loudspeaker":
        farend = ideal_vad(bundle.l_s, cfg, threshold_db, per_bin)
    else:
        raise InvalidInputError(f"unknown far-end VAD reference '{farend_reference}'")
    track = VadTrack(speech, farend, threshold_db)
    logger.debug(f"Regime frame counts: {track.regime_counts()}")
    return track


def accumulate_frames(
    x: np.ndarray,
    regimes: np.ndarray,
    y: Optional[np.ndarray] = None,
    label: str = "",
) -> SpectralCorrelationSet:
    """
    Regime-gated sums of x y^H over frames.

    Args:
        x: (K, F, D) spectra
        regimes: (K,) or (K, F) regime codes
        y: optional (K, F, E) spectra for cross-correlations; defaults to x
    """
    x = np.asarray(x)
    cross = y is not None
    y = x if y is None else np.asarray(y)
    if x.ndim != 3 or y.ndim != 3 or x.shape[:2] != y.shape[:2]:
        raise InvalidInputError(f"frame tensors disagree: {x.shape} vs {y.shape}")
    num_frames, num_bins = x.shape[:2]
    codes = np.asarray(regimes)
    if codes.ndim == 1:
        codes = np.broadcast_to(codes[:, None], (num_frames, num_bins))
    if codes.shape != (num_frames, num_bins):
        raise InvalidInputError(f"regimes {codes.shape} do not match frames {x.shape[:2]}")

    sums = np.zeros((len(Regime), num_bins, x.shape[2], y.shape[2]), dtype=complex)
    counts = np.zeros((len(Regime), num_bins), dtype=np.int64)
    for regime in Regime:
        mask = (codes == regime).astype(float)
        sums[regime] = np.einsum("kf,kfi,kfj->fij", mask, x, y.conj())
        counts[regime] = mask.sum(axis=0).astype(np.int64)
    return SpectralCorrelationSet(sums, counts, hermitian=not cross, label=label)


def accumulate(
    mic: StftTensor,
    loudspeakers: StftTensor,
    vads: VadTrack,
) -> Tuple[SpectralCorrelationSet, SpectralCorrelationSet]:
    """Plain (microphone) and extended ([m; l]) correlation sets."""
    if mic.num_frames != loudspeakers.num_frames or mic.num_bins != loudspeakers.num_bins:
        raise InvalidInputError(
            f"microphone frames {mic.values.shape[:2]} != loudspeaker frames "
            f"{loudspeakers.values.shape[:2]}"
        )
    if vads.num_frames != mic.num_frames:
        raise InvalidInputError(f"VAD has {vads.num_frames} frames, spectra have {mic.num_frames}")
    codes = vads.regimes()
    plain = accumulate_frames(mic.values, codes, label="plain")
    stacked = np.concatenate([mic.values, loudspeakers.values], axis=2)
    extended = accumulate_frames(stacked, codes, label="extended")
    missing = extended.missing_regimes()
    if missing:
        logger.warning(f"Regimes without frames: {', '.join(str(r) for r in missing)}")
    return plain, extended


def _pencil_subtract(
    cset: SpectralCorrelationSet,
    signal_regime: Regime,
    interference_regime: Regime,
    rank: int,
    consumer: str,
    policy: Optional[RankPolicy],
) -> np.ndarray:
    a = cset.matrix(signal_regime, consumer)
    b = cset.matrix(interference_regime, consumer)
    return map_bins(lambda af, bf: gevd_lowrank_subtract(af, bf, rank, policy), a, b)


def estimate_rss(
    cset: SpectralCorrelationSet,
    rank: int = 1,
    policy: Optional[RankPolicy] = None,
) -> np.ndarray:
    """Desired-speech correlation: rank-R GEVD subtraction of (0,1) from (1,1)."""
    return _pencil_subtract(cset, Regime.SPEECH_ECHO, Regime.ECHO_ONLY, rank, "R_ss", policy)


def estimate_extended_speech_plus_echo(
    cset: SpectralCorrelationSet,
    rank: int,
    policy: Optional[RankPolicy] = None,
) -> np.ndarray:
    """Extended speech + far-end-speech echo: rank-R subtraction of (0,0) from (1,1)."""
    return _pencil_subtract(
        cset, Regime.SPEECH_ECHO, Regime.NOISE_ONLY, rank, "R_ss+R_eses (extended)", policy
    )


def cross_correlations(
    cset: SpectralCorrelationSet,
    num_mics: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(R_ll, R_le, R_el) per bin from the extended regime (0,1) matrix."""
    r = cset.matrix(Regime.ECHO_ONLY, "R_ll/R_le")
    if not 0 < num_mics < r.shape[-1]:
        raise InvalidInputError(f"num_mics {num_mics} incompatible with dimension {r.shape[-1]}")
    r_ll = r[:, num_mics:, num_mics:]
    r_le = r[:, num_mics:, :num_mics]
    return r_ll, r_le, np.conj(np.swapaxes(r_le, -1, -2))


def estimate_cross_difference(
    cset: SpectralCorrelationSet,
    rank: int,
    signal_regime: Regime = Regime.SPEECH_ECHO,
    interference_regime: Regime = Regime.ECHO_ONLY,
) -> np.ndarray:
    """
    Rank-R truncated SVD of the difference of two regime cross-correlations.

    Used for E{x s^H}-type quantities whose factors differ, where no Hermitian
    pencil exists.
    """
    diff = cset.matrix(signal_regime, "cross difference") - cset.matrix(
        interference_regime, "cross difference"
    )

    def truncate(d: np.ndarray) -> np.ndarray:
        u, s, vh = np.linalg.svd(d, full_matrices=False)
        return (u[:, :rank] * s[:rank]) @ vh[:rank]

    return map_bins(truncate, diff)
