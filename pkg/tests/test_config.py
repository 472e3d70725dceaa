"""
Tests for configuration resolution.
"""
import pytest

from carnotlip import config
from carnotlip.config import Settings, load_settings, remove_config, set_value, show_config


class TestLoadSettings:
    """Test the precedence of setting sources."""

    def test_defaults(self, monkeypatch):
        """Test built-in defaults without env or config file."""
        monkeypatch.delenv("CARNOTLIP_CACHE_DIR")
        monkeypatch.delenv("CARNOTLIP_OUTPUT_DIR")
        assert load_settings() == Settings()

    def test_config_file(self):
        """Test values from the config file are used."""
        set_value('seed', '5')
        assert load_settings().seed == 5

    def test_env_beats_file(self, monkeypatch):
        """Test environment variables override the config file."""
        set_value('seed', '5')
        monkeypatch.setenv("CARNOTLIP_SEED", "9")
        assert load_settings().seed == 9

    def test_argument_beats_env(self, monkeypatch):
        """Test explicit arguments override everything."""
        monkeypatch.setenv("CARNOTLIP_SEED", "9")
        assert load_settings(seed=3).seed == 3
        assert load_settings(seed=None).seed == 9

    def test_env_dirs(self, isolated_dirs):
        """Test cache and output directories come from the environment."""
        settings = load_settings()
        assert settings.cache_dir == str(isolated_dirs / "cache")
        assert settings.output_dir == str(isolated_dirs / "runs")

    @pytest.mark.parametrize('overrides', [{'seed': -1}, {'workers': 0}, {'colour': 'red'}])
    def test_invalid(self, overrides):
        """Test invalid values and unknown keys raise ValueError."""
        with pytest.raises(ValueError):
            load_settings(**overrides)

    def test_unparseable_env(self, monkeypatch):
        """Test a non-integer seed in the environment raises ValueError."""
        monkeypatch.setenv("CARNOTLIP_WORKERS", "many")
        with pytest.raises(ValueError, match='workers'):
            load_settings()


class TestConfigFile:
    """Test writing, showing and removing the config file."""

    def test_set_unknown_key(self):
        """Test unknown keys raise ValueError."""
        with pytest.raises(ValueError, match='Valid keys'):
            set_value('colour', 'red')

    def test_set_bad_value(self):
        """Test values are parsed before saving."""
        with pytest.raises(ValueError):
            set_value('seed', 'abc')
        assert not config.get_config_file().exists()

    def test_set_keeps_other_keys(self):
        """Test saving one key keeps the others."""
        set_value('seed', '4')
        set_value('workers', '2')
        assert config.read_config_file() == {'seed': '4', 'workers': '2'}

    def test_show_and_remove(self, capsys):
        """Test show lists settings and remove deletes the file."""
        set_value('seed', '6')
        show_config()
        out = capsys.readouterr().out
        assert 'seed = 6' in out
        remove_config()
        assert not config.get_config_file().exists()
        remove_config()
        assert 'No config file' in capsys.readouterr().out
