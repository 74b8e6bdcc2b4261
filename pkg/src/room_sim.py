"""
Near-end room simulation and scenario synthesis.

Randomized image-method impulse responses, congruent source layouts on a
circle around the microphones, and component-wise mixing with reference
microphone calibration of SNR and SER.
"""

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import signal as sps

from config_loader import get_room_defaults, get_scenario_defaults
from errors import DegenerateScenarioError, InvalidInputError
from logger import get_logger
from signals import activity_mask, babble, read_wav, speech_like, white_noise, write_wav

logger = get_logger("aecnr.room")

# Zero crossings of the fractional-delay sinc on each side of the peak
SINC_HALF_WIDTH = 8
NUM_LAYOUTS = 5


class RoomConfig(BaseModel):
    """Shoebox room for the randomized image method."""

    model_config = ConfigDict(frozen=True)

    dimensions: Tuple[float, float, float] = (5.0, 5.0, 3.0)
    reflection_coefficient: Union[float, Tuple[float, float, float, float, float, float]] = Field(
        default=0.15,
        description="Amplitude reflection coefficient, scalar or (x_lo, x_hi, y_lo, y_hi, z_lo, z_hi)",
    )
    sample_rate: int = Field(default=16000, gt=0)
    ir_length: int = Field(default=128, ge=1)
    random_displacement: float = Field(default=0.13, ge=0.0)
    speed_of_sound: float = Field(default=343.0, gt=0.0)
    seed: int = Field(default=0, ge=0)

    @field_validator("dimensions")
    @classmethod
    def validate_dimensions(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(d <= 0 for d in v):
            raise ValueError("room dimensions must be > 0")
        return v

    @field_validator("reflection_coefficient")
    @classmethod
    def validate_reflection(cls, v):
        values = (v,) if isinstance(v, (int, float)) else v
        if any(not 0.0 <= b < 1.0 for b in values):
            raise ValueError("reflection coefficients must lie in [0, 1)")
        return v

    @classmethod
    def from_defaults(cls, **overrides) -> "RoomConfig":
        """Defaults from config/room.yaml with keyword overrides."""
        return cls(**{**get_room_defaults(), **overrides})

    def wall_coefficients(self) -> np.ndarray:
        """(2, 3) array: row 0 walls at coordinate 0, row 1 walls at the far side."""
        b = self.reflection_coefficient
        if isinstance(b, (int, float)):
            return np.full((2, 3), float(b))
        return np.asarray(b, dtype=float).reshape(3, 2).T


class ScenarioConfig(BaseModel):
    """Geometry, levels and sources of one scenario. Keys mirror config/scenario.yaml."""

    mic_positions: List[Tuple[float, float, float]] = [(2.0, 1.9, 1.0), (2.0, 1.8, 1.0)]
    reference_mic: int = Field(default=1, ge=1, description="1-based reference microphone")
    num_loudspeakers: int = Field(default=2, ge=1)
    source_circle_radius: float = Field(default=0.2, ge=0.0)
    layout: int = Field(default=1, ge=1, le=NUM_LAYOUTS)
    # None disables near-end noise
    snr_in_db: Optional[float] = 0.0
    # None leaves the echo at unit loudspeaker gain
    ser_in_db: Optional[float] = 0.0
    # None disables far-end noise
    farend_speech_noise_ratio_db: Optional[float] = 0.0
    inter_echo_power_ratio_db: float = 0.0
    duration_seconds: float = Field(default=30.0, gt=0.0)
    desk_duration_seconds: float = Field(default=10.0, gt=0.0)
    speech_path: Optional[Path] = None
    noise_path: Optional[Path] = None
    farend_speech_path: Optional[Path] = None
    speech_on_seconds: float = Field(default=4.0, gt=0.0)
    speech_off_seconds: float = Field(default=5.0, ge=0.0)
    farend_on_seconds: float = Field(default=3.0, gt=0.0)
    farend_off_seconds: float = Field(default=2.0, ge=0.0)
    farend_offset_seconds: float = Field(default=1.5, ge=0.0)
    babble_talkers: int = Field(default=6, ge=1)
    seed: int = Field(default=0, ge=0, description="Seed of the source signals")

    @model_validator(mode="after")
    def check_reference(self) -> "ScenarioConfig":
        if not self.mic_positions:
            raise ValueError("at least one microphone is required")
        if self.reference_mic > len(self.mic_positions):
            raise ValueError(
                f"reference_mic {self.reference_mic} exceeds {len(self.mic_positions)} microphones"
            )
        return self

    @classmethod
    def from_defaults(cls, **overrides) -> "ScenarioConfig":
        """Defaults from config/scenario.yaml with keyword overrides."""
        return cls(**{**get_scenario_defaults(), **overrides})

    @property
    def num_mics(self) -> int:
        return len(self.mic_positions)

    @property
    def reference_index(self) -> int:
        return self.reference_mic - 1


@dataclass
class SourceLayout:
    """Source positions on the circle around the array centre."""

    center: np.ndarray
    speech: np.ndarray
    noise: np.ndarray
    loudspeakers: np.ndarray  # (L, 3)
    angles: np.ndarray  # speech, noise, loudspeakers


@dataclass
class SourceSignals:
    """Dry source signals before room acoustics."""

    speech: np.ndarray  # (N,)
    noise: np.ndarray  # (N,)
    farend_speech: np.ndarray  # (N, L)
    farend_noise: np.ndarray  # (N, L)
    speech_activity: Optional[np.ndarray] = None
    farend_activity: Optional[np.ndarray] = None


@dataclass
class ScenarioBundle:
    """
    Ground-truth components of one scenario, (N, channels) each.

    Mixtures are derived, never stored, so m = s + e + n, e = e^s + e^n and
    l = l^s + l^n hold exactly.
    """

    s: np.ndarray
    n: np.ndarray
    e_s: np.ndarray
    e_n: np.ndarray
    l_s: np.ndarray
    l_n: np.ndarray
    echo_irs: np.ndarray  # (M, L, T)
    speech_irs: np.ndarray  # (M, T)
    noise_irs: np.ndarray  # (M, T)
    sample_rate: int
    reference_mic: int = 0  # 0-based
    gains: Dict[str, float] = field(default_factory=dict)
    layout: Optional[SourceLayout] = None

    @property
    def e(self) -> np.ndarray:
        return self.e_s + self.e_n

    @property
    def l(self) -> np.ndarray:  # noqa: E743
        return self.l_s + self.l_n

    @property
    def m(self) -> np.ndarray:
        return self.s + self.e + self.n

    @property
    def num_samples(self) -> int:
        return self.s.shape[0]

    @property
    def num_mics(self) -> int:
        return self.s.shape[1]

    @property
    def num_loudspeakers(self) -> int:
        return self.l_s.shape[1]

    def write_wav(self, directory: Union[str, Path]) -> List[Path]:
        """Write mixture and components as multichannel WAV files."""
        directory = Path(directory)
        components = {"m": self.m, "s": self.s, "n": self.n, "e": self.e, "l": self.l}
        return [
            write_wav(directory / f"{name}.wav", data, self.sample_rate)
            for name, data in components.items()
        ]


def _check_inside(room: RoomConfig, position: np.ndarray, label: str) -> None:
    dims = np.asarray(room.dimensions)
    if position.shape != (3,) or not np.all(np.isfinite(position)):
        raise InvalidInputError(f"{label} must be a finite 3-D position")
    if np.any(position <= 0) or np.any(position >= dims):
        raise InvalidInputError(f"{label} {position.tolist()} lies outside the room {room.dimensions}")


def rim_impulse_response(
    room: RoomConfig,
    source,
    receiver,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Randomized image-method impulse response of ``room.ir_length`` taps.

    Every image except the direct path is displaced by an independent uniform
    offset in [-d, d] per coordinate. Sub-sample delays use a Hann-windowed
    sinc. Deterministic for a fixed ``room.seed`` (or a fixed ``rng``).
    """
    src = np.asarray(source, dtype=float)
    rcv = np.asarray(receiver, dtype=float)
    _check_inside(room, src, "source")
    _check_inside(room, rcv, "receiver")
    rng = rng if rng is not None else np.random.default_rng(room.seed)

    fs = room.sample_rate
    c = room.speed_of_sound
    taps = room.ir_length
    dims = np.asarray(room.dimensions)
    beta = room.wall_coefficients()

    reach = (taps + SINC_HALF_WIDTH) * c / fs + np.sqrt(3) * room.random_displacement
    orders = np.ceil(reach / (2 * dims)).astype(int) + 1
    lattice = np.stack(
        np.meshgrid(*[np.arange(-o, o + 1) for o in orders], indexing="ij"), axis=-1
    ).reshape(-1, 3)
    parity = np.array(list(itertools.product((0, 1), repeat=3)))
    r = np.repeat(lattice, len(parity), axis=0)
    p = np.tile(parity, (len(lattice), 1))

    images = (1 - 2 * p) * (src + 2 * r * dims)
    amplitude = np.prod(beta[0] ** np.abs(r + p) * beta[1] ** np.abs(r), axis=1)

    displacement = rng.uniform(-room.random_displacement, room.random_displacement, size=images.shape)
    direct = ~np.any(r, axis=1) & ~np.any(p, axis=1)
    displacement[direct] = 0.0
    images = images + displacement

    distance = np.maximum(np.linalg.norm(images - rcv, axis=1), np.finfo(float).eps)
    delay = distance / c * fs
    keep = (amplitude > 0) & (delay < taps + SINC_HALF_WIDTH)
    amplitude = amplitude[keep] / (4 * np.pi * distance[keep])
    delay = delay[keep]

    offsets = np.arange(-SINC_HALF_WIDTH, SINC_HALF_WIDTH + 1)
    index = np.round(delay).astype(int)[:, None] + offsets
    t = index - delay[:, None]
    kernel = 0.5 * (1 + np.cos(np.pi * t / (SINC_HALF_WIDTH + 1))) * np.sinc(t)
    values = amplitude[:, None] * kernel
    valid = (index >= 0) & (index < taps)

    ir = np.zeros(taps)
    np.add.at(ir, index[valid], values[valid])
    return ir


def energy_decay_curve(ir: np.ndarray) -> np.ndarray:
    """Schroeder backward-integrated energy, in dB re the total energy."""
    energy = np.cumsum(np.asarray(ir, dtype=float)[::-1] ** 2)[::-1]
    total = energy[0]
    if total <= 0:
        raise InvalidInputError("impulse response has no energy")
    with np.errstate(divide="ignore"):
        return 10 * np.log10(energy / total)


def schroeder_t60(ir: np.ndarray, sample_rate: int, fit_db: Tuple[float, float] = (-5.0, -25.0)) -> float:
    """Reverberation time from a line fit to the decay curve after the direct-path peak."""
    ir = np.asarray(ir, dtype=float)
    edc = energy_decay_curve(ir[int(np.argmax(np.abs(ir))):])
    upper, lower = fit_db
    if edc[-1] > lower:
        # Short responses: fit down to the last sample, at least 10 dB of decay
        lower = max(float(edc[-1]), upper - 10.0)
    start = int(np.argmax(edc <= upper))
    stop = int(np.argmax(edc <= lower)) + 1
    if stop - start < 2:
        raise InvalidInputError("decay curve too short for a T60 fit")
    t = np.arange(start, stop) / sample_rate
    slope, _ = np.polyfit(t, edc[start:stop], 1)
    return float(-60.0 / slope)


def sabine_t60(room: RoomConfig) -> float:
    """Nominal reverberation time with absorption 1 - beta^2 per wall."""
    x, y, z = room.dimensions
    areas = np.array([[y * z, x * z, x * y]] * 2)
    absorption = float(np.sum(areas * (1 - room.wall_coefficients() ** 2)))
    if absorption <= 0:
        return float("inf")
    return 24 * np.log(10) / room.speed_of_sound * (x * y * z) / absorption


def place_sources(config: ScenarioConfig) -> SourceLayout:
    """
    Speech, noise and loudspeakers at congruent angles on a circle.

    The circle is horizontal, centred on the mean microphone position. Layout k
    rotates the angle set by (k - 1) / 5 of the angular spacing.
    """
    center = np.mean(np.asarray(config.mic_positions, dtype=float), axis=0)
    count = config.num_loudspeakers + 2
    spacing = 2 * np.pi / count
    angles = (config.layout - 1) * spacing / NUM_LAYOUTS + spacing * np.arange(count)
    ring = np.stack([np.cos(angles), np.sin(angles), np.zeros(count)], axis=1)
    points = center + config.source_circle_radius * ring
    return SourceLayout(
        center=center,
        speech=points[0],
        noise=points[1],
        loudspeakers=points[2:],
        angles=angles,
    )


def _convolve(x: np.ndarray, ir: np.ndarray) -> np.ndarray:
    if not np.any(ir):
        return np.zeros(x.shape[0])
    return sps.fftconvolve(x, ir)[: x.shape[0]]


def apply_linear_echo_path(irs, l) -> np.ndarray:
    """
    Microphone echo e_i = sum_j f_i^j * l_j, truncated to the signal length.

    Args:
        irs: (M, L, T) echo-path impulse responses
        l: (N, L) loudspeaker signals (or (N,) when L = 1)

    Returns:
        (N, M) echo signals
    """
    irs = np.asarray(irs, dtype=float)
    l = np.asarray(l, dtype=float)  # noqa: E741
    if l.ndim == 1:
        l = l[:, None]  # noqa: E741
    if irs.ndim != 3 or l.ndim != 2 or irs.shape[1] != l.shape[1]:
        raise InvalidInputError(f"echo paths {irs.shape} do not match loudspeakers {l.shape}")
    num_mics, num_ls, _ = irs.shape
    e = np.zeros((l.shape[0], num_mics))
    for i in range(num_mics):
        for j in range(num_ls):
            e[:, i] += _convolve(l[:, j], irs[i, j])
    return e


def _apply_source_irs(x: np.ndarray, irs: np.ndarray) -> np.ndarray:
    return np.stack([_convolve(x, ir) for ir in irs], axis=1)


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def _gain_for_ratio(reference_power: float, power: float, ratio_db: float, label: str) -> float:
    """Amplitude gain g with reference_power / (g^2 power) = 10^(ratio_db / 10)."""
    if reference_power <= 0 or power <= 0:
        raise DegenerateScenarioError(f"{label}: silent component makes the ratio undefined")
    return float(np.sqrt(reference_power / (power * 10 ** (ratio_db / 10))))


def load_sources(config: ScenarioConfig, sample_rate: int) -> SourceSignals:
    """
    Corpus files when configured, otherwise the synthetic speech-like generator.

    Far-end speech from a single file is decorrelated across loudspeakers by
    circular shifts; far-end noise is always white.
    """
    rng = np.random.default_rng([config.seed, config.layout])
    n = int(round(config.duration_seconds * sample_rate))
    num_ls = config.num_loudspeakers

    speech_mask = activity_mask(n, sample_rate, config.speech_on_seconds, config.speech_off_seconds)
    farend_mask = activity_mask(
        n, sample_rate, config.farend_on_seconds, config.farend_off_seconds,
        config.farend_offset_seconds,
    )

    if config.speech_path:
        speech = read_wav(config.speech_path, sample_rate, n)[:n]
        speech_mask = None
    else:
        logger.warning("No speech corpus configured, using synthetic speech-like source")
        speech = speech_like(n, sample_rate, rng, speech_mask)

    if config.noise_path:
        noise = read_wav(config.noise_path, sample_rate, n)[:n]
    else:
        noise = babble(n, sample_rate, rng, config.babble_talkers)

    if config.farend_speech_path:
        base = read_wav(config.farend_speech_path, sample_rate, n)[:n]
        farend = np.stack([np.roll(base, j * n // num_ls) for j in range(num_ls)], axis=1)
        farend_mask = None
    else:
        logger.warning("No far-end corpus configured, using synthetic speech-like source")
        farend = np.stack(
            [speech_like(n, sample_rate, rng, farend_mask) for _ in range(num_ls)], axis=1
        )

    farend_noise = np.stack([white_noise(n, rng) for _ in range(num_ls)], axis=1)
    return SourceSignals(speech, noise, farend, farend_noise, speech_mask, farend_mask)


def simulate_paths(config: ScenarioConfig, room: RoomConfig) -> Tuple[SourceLayout, np.ndarray, np.ndarray, np.ndarray]:
    """RIM impulse responses for speech, noise and echo paths of one layout."""
    layout = place_sources(config)
    mics = np.asarray(config.mic_positions, dtype=float)

    def path(source_id: int, source: np.ndarray, mic_id: int) -> np.ndarray:
        rng = np.random.default_rng([room.seed, source_id, mic_id])
        return rim_impulse_response(room, source, mics[mic_id], rng)

    speech_irs = np.stack([path(0, layout.speech, i) for i in range(len(mics))])
    noise_irs = np.stack([path(1, layout.noise, i) for i in range(len(mics))])
    echo_irs = np.stack([
        np.stack([path(2 + j, ls, i) for j, ls in enumerate(layout.loudspeakers)])
        for i in range(len(mics))
    ])
    return layout, speech_irs, noise_irs, echo_irs


def mix_scenario(
    config: ScenarioConfig,
    sources: SourceSignals,
    speech_irs: np.ndarray,
    noise_irs: np.ndarray,
    echo_irs: np.ndarray,
    sample_rate: int,
    layout: Optional[SourceLayout] = None,
) -> ScenarioBundle:
    """
    Convolve, balance and calibrate the components at the reference microphone.

    Order: far-end speech/noise ratio per loudspeaker, inter-echo power ratio,
    SER (loudspeaker gain), SNR (noise gain).
    """
    num_mics = config.num_mics
    num_ls = config.num_loudspeakers
    if speech_irs.shape[0] != num_mics or noise_irs.shape[0] != num_mics:
        raise InvalidInputError("source impulse responses do not match the microphone count")
    if echo_irs.shape[:2] != (num_mics, num_ls):
        raise InvalidInputError(f"echo paths {echo_irs.shape[:2]} != ({num_mics}, {num_ls})")
    ref = config.reference_index
    gains: Dict[str, float] = {}

    s = _apply_source_irs(sources.speech, speech_irs)
    p_s = _power(s[:, ref])
    if p_s <= 0:
        raise DegenerateScenarioError("desired speech is silent at the reference microphone")

    l_s = np.array(sources.farend_speech, dtype=float, copy=True)
    l_n = np.array(sources.farend_noise, dtype=float, copy=True)
    for j in range(num_ls):
        if config.farend_speech_noise_ratio_db is None:
            l_n[:, j] = 0.0
            continue
        g = _gain_for_ratio(
            _power(l_s[:, j]), _power(l_n[:, j]), config.farend_speech_noise_ratio_db,
            f"far-end noise of loudspeaker {j + 1}",
        )
        l_n[:, j] *= g
        gains[f"farend_noise_{j + 1}"] = g

    echo_powers = [
        _power(apply_linear_echo_path(echo_irs[ref:ref + 1, j:j + 1], l_s[:, j] + l_n[:, j]))
        for j in range(num_ls)
    ]
    for j in range(1, num_ls):
        g = _gain_for_ratio(
            echo_powers[0], echo_powers[j], config.inter_echo_power_ratio_db,
            f"echo of loudspeaker {j + 1}",
        )
        l_s[:, j] *= g
        l_n[:, j] *= g
        gains[f"loudspeaker_{j + 1}"] = g

    e_s = apply_linear_echo_path(echo_irs, l_s)
    e_n = apply_linear_echo_path(echo_irs, l_n)
    if config.ser_in_db is not None:
        g = _gain_for_ratio(p_s, _power(e_s[:, ref] + e_n[:, ref]), config.ser_in_db, "echo")
        l_s *= g
        l_n *= g
        e_s *= g
        e_n *= g
        gains["echo"] = g

    if config.snr_in_db is None:
        n = np.zeros_like(s)
    else:
        n = _apply_source_irs(sources.noise, noise_irs)
        g = _gain_for_ratio(p_s, _power(n[:, ref]), config.snr_in_db, "near-end noise")
        n *= g
        gains["noise"] = g

    logger.debug(f"Scenario layout {config.layout}: gains {gains}")
    return ScenarioBundle(
        s=s, n=n, e_s=e_s, e_n=e_n, l_s=l_s, l_n=l_n,
        echo_irs=echo_irs, speech_irs=speech_irs, noise_irs=noise_irs,
        sample_rate=sample_rate, reference_mic=ref, gains=gains, layout=layout,
    )


def synthesize_scenario(
    config: ScenarioConfig,
    room: RoomConfig,
    sources: Optional[SourceSignals] = None,
) -> ScenarioBundle:
    """Simulate the room, load or generate sources and mix one calibrated scenario."""
    layout, speech_irs, noise_irs, echo_irs = simulate_paths(config, room)
    if sources is None:
        sources = load_sources(config, room.sample_rate)
    return mix_scenario(config, sources, speech_irs, noise_irs, echo_irs, room.sample_rate, layout)
