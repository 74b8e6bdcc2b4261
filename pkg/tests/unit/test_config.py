"""
Unit tests for settings and YAML config loading.

Tests cover:
- Settings from environment variables
- Settings validation
- YAML defaults and caching
"""

import sys
from pathlib import Path

import pytest
from pydantic import ValidationError

sys.path.insert(0, str(Path(__file__).parent.parent.parent / "src"))


class TestSettings:
    """Tests for the Settings model."""

    def test_reads_environment(self, mock_env_vars):
        """AECNR_* variables populate the settings."""
        from config import get_settings

        settings = get_settings()
        assert settings.log_level == "DEBUG"
        assert settings.workers == 2
        assert settings.rank_tolerance == pytest.approx(1e-9)
        assert settings.log_dir == Path(mock_env_vars["AECNR_LOG_DIR"])

    def test_defaults(self, monkeypatch):
        """Unset variables fall back to the defaults."""
        from config import Settings

        for name in ("AECNR_WORKERS", "AECNR_VAD_THRESHOLD_DB", "AECNR_LOG_LEVEL"):
            monkeypatch.delenv(name, raising=False)
        settings = Settings(_env_file=None)
        assert settings.workers == 1
        assert settings.vad_threshold_db == 40.0
        assert settings.log_level == "INFO"

    def test_singleton(self, mock_env_vars):
        """get_settings returns the same instance until reset."""
        from config import get_settings, reset_settings

        first = get_settings()
        assert get_settings() is first
        reset_settings()
        assert get_settings() is not first

    def test_invalid_log_level(self, monkeypatch):
        """Unknown levels are rejected."""
        from config import Settings

        monkeypatch.setenv("AECNR_LOG_LEVEL", "chatty")
        with pytest.raises(ValidationError):
            Settings(_env_file=None)

    def test_workers_bounds(self, monkeypatch):
        """At least one worker."""
        from config import Settings

        monkeypatch.setenv("AECNR_WORKERS", "0")
        with pytest.raises(ValidationError):
            Settings(_env_file=None)

    def test_validate_config_creates_log_dir(self, mock_env_vars):
        """Startup validation creates the log directory."""
        from config import validate_config

        assert validate_config() is True
        assert Path(mock_env_vars["AECNR_LOG_DIR"]).is_dir()

    def test_validate_config_missing_config_dir(self, mock_env_vars, monkeypatch, tmp_path):
        """A missing config directory fails validation."""
        from config import validate_config

        monkeypatch.setenv("AECNR_CONFIG_DIR", str(tmp_path / "nowhere"))
        with pytest.raises(ValueError):
            validate_config()


class TestConfigLoader:
    """Tests for the YAML loader."""

    def test_shipped_defaults(self):
        """room.yaml and scenario.yaml hold the desk scenario."""
        from config_loader import get_room_defaults, get_scenario_defaults

        room = get_room_defaults()
        scenario = get_scenario_defaults()
        assert room["dimensions"] == [5.0, 5.0, 3.0]
        assert room["ir_length"] == 128
        assert scenario["num_loudspeakers"] == 2
        assert len(scenario["mic_positions"]) == 2

    def test_cache(self):
        """Repeated loads return the cached mapping."""
        from config_loader import clear_cache, load_yaml

        first = load_yaml("room.yaml")
        assert load_yaml("room.yaml") is first
        clear_cache()
        assert load_yaml("room.yaml") is not first

    def test_missing_file(self):
        """Unknown configs raise FileNotFoundError."""
        from config_loader import load_yaml

        with pytest.raises(FileNotFoundError):
            load_yaml("does_not_exist.yaml")

    def test_non_mapping_rejected(self, tmp_path):
        """Top-level YAML must be a mapping."""
        from config_loader import load_yaml

        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ValueError):
            load_yaml(path)

    def test_config_dir_from_environment(self, monkeypatch, tmp_path):
        """AECNR_CONFIG_DIR redirects the named config files."""
        from config import reset_settings
        from config_loader import get_room_defaults

        (tmp_path / "room.yaml").write_text("dimensions: [4.0, 3.0, 2.5]\nir_length: 256\n")
        monkeypatch.setenv("AECNR_CONFIG_DIR", str(tmp_path))
        reset_settings()

        room = get_room_defaults()
        assert room["dimensions"] == [4.0, 3.0, 2.5]
        assert room["ir_length"] == 256
