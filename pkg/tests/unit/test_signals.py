"""
Unit tests for source signal generation and WAV input/output.

Tests cover:
- On/off activity patterns
- Speech-like and babble generators
- WAV reading with resampling and validation
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent.parent / "src"))


class TestActivityMask:
    """Tests for activity_mask."""

    def test_on_off_pattern(self):
        """One second on, one second off at 10 Hz."""
        from signals import activity_mask

        mask = activity_mask(40, 10, 1.0, 1.0)
        assert mask[:10].all()
        assert not mask[10:20].any()
        assert mask[20:30].all()

    def test_offset_delays_activity(self):
        """Nothing is active before the offset."""
        from signals import activity_mask

        mask = activity_mask(50, 10, 1.0, 1.0, offset_seconds=1.5)
        assert not mask[:15].any()
        assert mask[15:25].all()

    def test_rejects_zero_on_time(self):
        """An empty on-phase is invalid."""
        from errors import InvalidInputError
        from signals import activity_mask

        with pytest.raises(InvalidInputError):
            activity_mask(10, 10, 0.0, 1.0)


class TestGenerators:
    """Tests for the synthetic source generators."""

    def test_speech_like_unit_power_when_active(self, rng):
        """Active samples have unit power; masked samples are zero."""
        from signals import activity_mask, speech_like

        mask = activity_mask(32000, 16000, 0.5, 0.5)
        x = speech_like(32000, 16000, rng, mask)
        assert not np.any(x[~mask])
        assert np.mean(x[mask] ** 2) == pytest.approx(1.0, rel=1e-9)

    def test_speech_like_is_seeded(self):
        """Same seed, same signal."""
        from signals import speech_like

        a = speech_like(4000, 16000, np.random.default_rng(3))
        b = speech_like(4000, 16000, np.random.default_rng(3))
        assert np.array_equal(a, b)

    def test_babble_unit_power(self, rng):
        """Babble is normalized to unit power."""
        from signals import babble

        x = babble(16000, 16000, rng, talkers=4)
        assert np.mean(x ** 2) == pytest.approx(1.0, rel=1e-9)

    def test_babble_needs_a_talker(self, rng):
        """Zero talkers is invalid."""
        from errors import InvalidInputError
        from signals import babble

        with pytest.raises(InvalidInputError):
            babble(100, 16000, rng, talkers=0)


class TestWavIO:
    """Tests for read_wav and write_wav."""

    def test_write_then_read_same_rate(self, tmp_path, rng):
        """Float WAV keeps samples at float32 precision."""
        from signals import read_wav, write_wav

        x = 0.1 * rng.standard_normal(1600)
        path = write_wav(tmp_path / "a.wav", x, 16000)
        y = read_wav(path, 16000)
        assert np.allclose(x, y, atol=1e-7)

    def test_resamples_to_requested_rate(self, tmp_path, rng):
        """An 8 kHz file read at 16 kHz has twice the samples."""
        from signals import read_wav, write_wav

        path = write_wav(tmp_path / "b.wav", 0.1 * rng.standard_normal(800), 8000)
        assert read_wav(path, 16000).shape == (1600,)

    def test_missing_file(self, tmp_path):
        """Missing files are invalid input."""
        from errors import InvalidInputError
        from signals import read_wav

        with pytest.raises(InvalidInputError):
            read_wav(tmp_path / "missing.wav", 16000)

    def test_rejects_stereo(self, tmp_path, rng):
        """Corpus files must be mono."""
        from errors import InvalidInputError
        from signals import read_wav, write_wav

        path = write_wav(tmp_path / "c.wav", 0.1 * rng.standard_normal((100, 2)), 16000)
        with pytest.raises(InvalidInputError):
            read_wav(path, 16000)

    def test_rejects_too_short(self, tmp_path, rng):
        """Files shorter than the scenario are invalid."""
        from errors import InvalidInputError
        from signals import read_wav, write_wav

        path = write_wav(tmp_path / "d.wav", 0.1 * rng.standard_normal(100), 16000)
        with pytest.raises(InvalidInputError):
            read_wav(path, 16000, min_samples=1000)
