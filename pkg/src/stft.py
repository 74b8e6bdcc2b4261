"""Square-root Hann STFT analysis and weighted overlap-add synthesis."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import signal as sps

from errors import InvalidInputError


class StftConfig(BaseModel):
    """Filterbank settings; hop must be half the window for the sqrt-Hann pair."""

    model_config = ConfigDict(frozen=True)

    window_length: int = Field(default=512, ge=4, description="Frame length and FFT size (samples)")
    hop: int = Field(default=256, ge=1, description="Frame advance (samples)")
    sample_rate: int = Field(default=16000, gt=0, description="Sampling rate (Hz)")

    @model_validator(mode="after")
    def check_overlap(self) -> "StftConfig":
        if self.window_length % 2 or 2 * self.hop != self.window_length:
            raise ValueError("hop must equal window_length / 2 with an even window")
        return self

    @property
    def num_bins(self) -> int:
        return self.window_length // 2 + 1

    def frequencies(self) -> np.ndarray:
        return np.fft.rfftfreq(self.window_length, d=1.0 / self.sample_rate)

    def window(self) -> np.ndarray:
        # Periodic Hann squares and overlap-adds to one at 50 % overlap
        return np.sqrt(sps.get_window("hann", self.window_length, fftbins=True))

    def num_frames(self, num_samples: int) -> int:
        return (num_samples - self.window_length) // self.hop + 1


@dataclass
class StftTensor:
    """Frames x bins x channels spectrogram with the config that produced it."""

    values: np.ndarray
    config: StftConfig
    num_samples: int

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_bins(self) -> int:
        return self.values.shape[1]

    @property
    def num_channels(self) -> int:
        return self.values.shape[2]

    def with_values(self, values: np.ndarray) -> "StftTensor":
        """Same framing, new content (e.g. after per-bin filtering)."""
        if values.ndim != 3 or values.shape[:2] != self.values.shape[:2]:
            raise InvalidInputError(f"values shape {values.shape} does not match framing")
        return StftTensor(values, self.config, self.num_samples)


def analyze(signal, cfg: StftConfig) -> StftTensor:
    """
    Windowed FFT of every frame and channel.

    Each windowed frame is rotated so the window centre sits at index zero
    before the FFT. Accepts (N,) or (N, C) real signals.
    """
    x = np.asarray(signal)
    if np.iscomplexobj(x):
        raise InvalidInputError("STFT analysis expects real-valued samples")
    x = x.astype(float, copy=False)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise InvalidInputError(f"signal must be (N,) or (N, C), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("signal has non-finite samples")
    n = x.shape[0]
    w = cfg.window_length
    if n < w:
        raise InvalidInputError(f"signal of {n} samples is shorter than one window ({w})")

    k = cfg.num_frames(n)
    frames = sliding_window_view(x, w, axis=0)[:: cfg.hop][:k]  # (K, C, W)
    frames = np.roll(frames * cfg.window(), -(w // 2), axis=-1)
    spectrum = np.fft.rfft(frames, axis=-1)
    return StftTensor(np.ascontiguousarray(np.transpose(spectrum, (0, 2, 1))), cfg, n)


def synthesize(tensor: StftTensor, cfg: StftConfig) -> np.ndarray:
    """Weighted overlap-add inverse; returns (N, C) samples."""
    if tensor.config != cfg:
        raise InvalidInputError(
            f"tensor framed with {tensor.config!r}, synthesis requested with {cfg!r}"
        )
    w = cfg.window_length
    if tensor.num_bins != cfg.num_bins:
        raise InvalidInputError(f"tensor has {tensor.num_bins} bins, config expects {cfg.num_bins}")

    frames = np.fft.irfft(np.transpose(tensor.values, (0, 2, 1)), n=w, axis=-1)
    frames = np.roll(frames, w // 2, axis=-1) * cfg.window()  # (K, C, W)

    length = max(tensor.num_samples, (tensor.num_frames - 1) * cfg.hop + w)
    out = np.zeros((length, tensor.num_channels))
    for k in range(tensor.num_frames):
        start = k * cfg.hop
        out[start:start + w] += frames[k].T
    return out[: tensor.num_samples]
