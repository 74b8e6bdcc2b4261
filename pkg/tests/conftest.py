"""
Pytest configuration and shared fixtures for aecnr-lab tests.
"""

import sys
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))


# =============================================================================
# Random State Fixtures
# =============================================================================

@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator; every test starts from the same state."""
    return np.random.default_rng(1234)


def crandn(rng: np.random.Generator, *shape: int) -> np.ndarray:
    """Circular complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@pytest.fixture
def random_psd(rng) -> Callable[[int, Optional[int]], np.ndarray]:
    """Factory for Hermitian PSD matrices of given size and rank."""
    def make(size: int, rank: Optional[int] = None) -> np.ndarray:
        rank = size if rank is None else rank
        c = crandn(rng, size, rank)
        return c @ c.conj().T

    return make


# =============================================================================
# Exact Model Fixtures
# =============================================================================

@pytest.fixture
def full_rank_model(rng):
    """Two microphones, two loudspeakers, full-rank Schur complement."""
    from verification import random_model

    return random_model(rng, 2, 2)


@pytest.fixture
def full_rank_correlations(full_rank_model):
    """Exact correlations of the full-rank model."""
    from verification import exact_correlations

    return exact_correlations(full_rank_model)


@pytest.fixture
def deficient_correlations(rng):
    """Three microphones with one speech source and one noise source."""
    from verification import deficient_model, exact_correlations

    return exact_correlations(deficient_model(rng, 3, 2))


# =============================================================================
# STFT Fixtures
# =============================================================================

@pytest.fixture
def stft_config():
    """Default 512/256 square-root Hann filterbank at 16 kHz."""
    from stft import StftConfig

    return StftConfig()


# =============================================================================
# Scenario Fixtures
# =============================================================================

def _gated(num_samples: int, period: int, on: int, offset: int = 0) -> np.ndarray:
    t = np.arange(num_samples) - offset
    mask = np.mod(t, period) < on
    mask[t < 0] = False
    return mask


@pytest.fixture
def gain_bundle():
    """
    Factory for scenarios with memoryless (single-tap) acoustic paths.

    Every path is a pure gain, so each STFT bin sees the exact narrowband
    mixing model. Desired speech is white noise gated on whole seconds;
    far-end speech is white noise gated with a different period so all four
    regimes occur.
    """
    from room_sim import ScenarioBundle

    def make(
        speech_gains,
        echo_gains=None,
        noise_gains=None,
        num_loudspeakers: int = 1,
        seconds: float = 4.0,
        sample_rate: int = 16000,
        farend_noise_level: float = 0.0,
        farend_always_on: bool = False,
        seed: int = 7,
    ) -> "ScenarioBundle":
        rng = np.random.default_rng(seed)
        n = int(seconds * sample_rate)
        speech_gains = np.asarray(speech_gains, dtype=float)
        num_mics = speech_gains.shape[0]

        s0 = rng.standard_normal(n) * _gated(n, sample_rate, sample_rate // 2)
        s = s0[:, None] * speech_gains[None, :]

        period = int(0.7 * sample_rate)
        farend_mask = np.ones(n, dtype=bool) if farend_always_on else _gated(n, period, period // 2, 1024)
        l_s = rng.standard_normal((n, num_loudspeakers)) * farend_mask[:, None]
        l_n = farend_noise_level * rng.standard_normal((n, num_loudspeakers))

        if echo_gains is None:
            echo_irs = np.zeros((num_mics, num_loudspeakers, 1))
        else:
            echo_irs = np.asarray(echo_gains, dtype=float).reshape(num_mics, num_loudspeakers, 1)
        f = echo_irs[:, :, 0]
        e_s = l_s @ f.T
        e_n = l_n @ f.T

        if noise_gains is None:
            noise = np.zeros((n, num_mics))
            noise_irs = np.zeros((num_mics, 1))
        else:
            noise_gains = np.asarray(noise_gains, dtype=float).reshape(num_mics, -1)
            sources = rng.standard_normal((n, noise_gains.shape[1]))
            noise = sources @ noise_gains.T
            noise_irs = noise_gains[:, :1]

        return ScenarioBundle(
            s=s,
            n=noise,
            e_s=e_s,
            e_n=e_n,
            l_s=l_s,
            l_n=l_n,
            echo_irs=echo_irs,
            speech_irs=speech_gains[:, None],
            noise_irs=noise_irs,
            sample_rate=sample_rate,
            reference_mic=0,
        )

    return make


@pytest.fixture
def short_scenario_config():
    """Default geometry with a 4 s signal and a fast on/off pattern."""
    from room_sim import ScenarioConfig

    return ScenarioConfig.from_defaults(
        duration_seconds=4.0,
        speech_on_seconds=1.0,
        speech_off_seconds=1.0,
        farend_on_seconds=0.7,
        farend_off_seconds=0.6,
        farend_offset_seconds=0.3,
        seed=11,
    )


@pytest.fixture
def room_config():
    """Default room from config/room.yaml."""
    from room_sim import RoomConfig

    return RoomConfig.from_defaults()


@pytest.fixture
def short_bundle(short_scenario_config, room_config):
    """Simulated 4 s scenario with the default room and two loudspeakers."""
    from room_sim import synthesize_scenario

    return synthesize_scenario(short_scenario_config, room_config)


# =============================================================================
# Output Fixtures
# =============================================================================

@pytest.fixture
def temp_results_dir(tmp_path: Path) -> Path:
    """Empty sweep output directory."""
    out = tmp_path / "results"
    out.mkdir()
    return out


@pytest.fixture
def temp_db_path(tmp_path: Path) -> str:
    """Path for a throwaway run ledger."""
    return str(tmp_path / "runs.db")


# =============================================================================
# Settings Fixtures
# =============================================================================

@pytest.fixture(autouse=True)
def fresh_config_state():
    """Drop the settings singleton and the YAML cache around every test."""
    from config import reset_settings
    from config_loader import clear_cache

    reset_settings()
    clear_cache()
    yield
    reset_settings()
    clear_cache()


@pytest.fixture
def mock_env_vars(monkeypatch, tmp_path: Path):
    """Environment for Settings with logs under the temp directory."""
    env_vars = {
        "AECNR_LOG_LEVEL": "debug",
        "AECNR_LOG_DIR": str(tmp_path / "logs"),
        "AECNR_WORKERS": "2",
        "AECNR_RANK_TOLERANCE": "1e-9",
    }
    for key, value in env_vars.items():
        monkeypatch.setenv(key, value)
    return env_vars


# =============================================================================
# Test Configuration
# =============================================================================

def pytest_configure(config):
    """Configure pytest markers."""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )
    config.addinivalue_line(
        "markers", "golden: marks tests as golden tests"
    )
