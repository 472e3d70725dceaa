"""
Pytest configuration file.
"""
import os

import pytest


@pytest.fixture(scope="session", autouse=True)
def clear_carnotlip_env():
    """Drop CARNOTLIP_* variables inherited from the developer shell."""
    saved = {k: os.environ.pop(k) for k in list(os.environ) if k.startswith("CARNOTLIP_")}
    yield
    os.environ.update(saved)


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    """Point the config file, cache and outputs at a per-test directory."""
    from unittest.mock import patch

    monkeypatch.setenv("CARNOTLIP_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.setenv("CARNOTLIP_OUTPUT_DIR", str(tmp_path / "runs"))
    config_file = tmp_path / "home" / ".carnotlip" / "config"
    with patch("carnotlip.config.get_config_file", return_value=config_file):
        yield tmp_path
