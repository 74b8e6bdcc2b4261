"""
Unit tests for the square-root Hann STFT.

Tests cover:
- Filterbank configuration validation
- Frame-level energy (Parseval) of the analysis
- Interior perfect reconstruction of analysis + synthesis
- Input validation
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

sys.path.insert(0, str(Path(__file__).parent.parent.parent / "src"))


class TestStftConfig:
    """Tests for StftConfig."""

    def test_defaults(self, stft_config):
        """512-sample frames, 256 hop, 16 kHz, 257 bins."""
        assert stft_config.window_length == 512
        assert stft_config.hop == 256
        assert stft_config.sample_rate == 16000
        assert stft_config.num_bins == 257

    def test_rejects_non_half_overlap(self):
        """Hop must be half the window."""
        from stft import StftConfig

        with pytest.raises(ValidationError):
            StftConfig(window_length=512, hop=128)

    def test_rejects_odd_window(self):
        """Odd windows cannot have an exact half hop."""
        from stft import StftConfig

        with pytest.raises(ValidationError):
            StftConfig(window_length=511, hop=255)

    def test_squared_window_overlap_adds_to_one(self, stft_config):
        """w^2 at 50 % overlap sums to one."""
        w2 = stft_config.window() ** 2
        hop = stft_config.hop
        assert np.allclose(w2[:hop] + w2[hop:], 1.0, atol=1e-12)

    def test_frame_count(self, stft_config):
        """K = (N - W) // H + 1."""
        assert stft_config.num_frames(512) == 1
        assert stft_config.num_frames(1024) == 3
        assert stft_config.num_frames(1023) == 2


class TestAnalyze:
    """Tests for analyze."""

    def test_output_shape(self, stft_config, rng):
        """(K, F, C) for multichannel input."""
        from stft import analyze

        x = rng.standard_normal((4096, 3))
        tensor = analyze(x, stft_config)
        assert tensor.values.shape == (15, 257, 3)
        assert tensor.num_samples == 4096

    def test_mono_input_gets_channel_axis(self, stft_config, rng):
        """(N,) input becomes one channel."""
        from stft import analyze

        assert analyze(rng.standard_normal(2048), stft_config).num_channels == 1

    def test_frame_energy_parseval(self, stft_config, rng):
        """Per-frame spectral energy equals the windowed frame energy."""
        from stft import analyze

        x = rng.standard_normal(8192)
        tensor = analyze(x, stft_config)
        w = stft_config.window_length
        spec = np.abs(tensor.values[:, :, 0]) ** 2
        spectral = (spec[:, 0] + 2 * spec[:, 1:-1].sum(axis=1) + spec[:, -1]) / w
        window = stft_config.window()
        for k in range(tensor.num_frames):
            frame = x[k * stft_config.hop:k * stft_config.hop + w] * window
            assert spectral[k] == pytest.approx(np.sum(frame ** 2), rel=1e-6)

    def test_rejects_complex_input(self, stft_config):
        """Only real samples are accepted."""
        from errors import InvalidInputError
        from stft import analyze

        with pytest.raises(InvalidInputError):
            analyze(np.ones(1024, dtype=complex), stft_config)

    def test_rejects_short_input(self, stft_config):
        """Signals shorter than one window are invalid."""
        from errors import InvalidInputError
        from stft import analyze

        with pytest.raises(InvalidInputError):
            analyze(np.ones(100), stft_config)

    def test_rejects_non_finite(self, stft_config):
        """NaN samples are invalid."""
        from errors import InvalidInputError
        from stft import analyze

        x = np.ones(1024)
        x[10] = np.nan
        with pytest.raises(InvalidInputError):
            analyze(x, stft_config)


class TestSynthesize:
    """Tests for weighted overlap-add synthesis."""

    def test_interior_perfect_reconstruction(self, stft_config, rng):
        """Analysis then synthesis reproduces interior samples."""
        from stft import analyze, synthesize

        x = rng.standard_normal((16000, 2))
        y = synthesize(analyze(x, stft_config), stft_config)
        w = stft_config.window_length
        interior = slice(w, x.shape[0] - w)
        error = np.max(np.abs(y[interior] - x[interior])) / np.max(np.abs(x[interior]))
        assert error <= 1e-10
        assert y.shape == x.shape

    def test_zero_spectrum_gives_silence(self, stft_config, rng):
        """Zeroed STFT values synthesize to zeros."""
        from stft import analyze, synthesize

        tensor = analyze(rng.standard_normal(4096), stft_config)
        silent = tensor.with_values(np.zeros_like(tensor.values))
        assert not np.any(synthesize(silent, stft_config))

    def test_rejects_mismatched_config(self, stft_config, rng):
        """A tensor can only be synthesized with its own config."""
        from errors import InvalidInputError
        from stft import StftConfig, analyze, synthesize

        tensor = analyze(rng.standard_normal(4096), stft_config)
        with pytest.raises(InvalidInputError):
            synthesize(tensor, StftConfig(window_length=256, hop=128))

    def test_with_values_checks_framing(self, stft_config, rng):
        """Replacement values must keep frames and bins."""
        from errors import InvalidInputError
        from stft import analyze

        tensor = analyze(rng.standard_normal(4096), stft_config)
        with pytest.raises(InvalidInputError):
            tensor.with_values(np.zeros((3, 257, 1)))
