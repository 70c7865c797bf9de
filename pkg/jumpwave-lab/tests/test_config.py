from pathlib import Path

from core.config import load_settings

_KEYS = [
    "JUMPWAVE_WORKERS",
    "JUMPWAVE_LOG_LEVEL",
    "JUMPWAVE_CACHE_DIR",
    "JUMPWAVE_SPECTRUM_CACHE",
    "JUMPWAVE_PLOTS",
    "JUMPWAVE_CG_MAX_ITER",
    "JUMPWAVE_POWER_ITERATIONS",
]


def _clear_env(monkeypatch):
    for key in _KEYS:
        monkeypatch.delenv(key, raising=False)


def test_defaults_without_env(monkeypatch):
    _clear_env(monkeypatch)
    settings = load_settings(dotenv=False)
    assert settings.max_workers >= 1
    assert settings.log_level == "INFO"
    assert settings.spectrum_cache is True
    assert settings.plots is True
    assert settings.cg_max_iter == 2000
    assert settings.power_iterations == 50


def test_env_overrides(monkeypatch, tmp_path: Path):
    _clear_env(monkeypatch)
    monkeypatch.setenv("JUMPWAVE_WORKERS", "3")
    monkeypatch.setenv("JUMPWAVE_LOG_LEVEL", "debug")
    monkeypatch.setenv("JUMPWAVE_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.setenv("JUMPWAVE_SPECTRUM_CACHE", "off")
    monkeypatch.setenv("JUMPWAVE_PLOTS", "0")
    settings = load_settings(dotenv=False)
    assert settings.max_workers == 3
    assert settings.log_level == "DEBUG"
    assert settings.cache_dir == tmp_path / "cache"
    assert settings.spectrum_cache is False
    assert settings.plots is False


def test_bad_values_fall_back_or_clamp(monkeypatch):
    _clear_env(monkeypatch)
    monkeypatch.setenv("JUMPWAVE_WORKERS", "0")
    monkeypatch.setenv("JUMPWAVE_LOG_LEVEL", "chatty")
    monkeypatch.setenv("JUMPWAVE_CG_MAX_ITER", "many")
    monkeypatch.setenv("JUMPWAVE_POWER_ITERATIONS", "2")
    settings = load_settings(dotenv=False)
    assert settings.max_workers == 1
    assert settings.log_level == "INFO"
    assert settings.cg_max_iter == 2000
    assert settings.power_iterations == 10
