import logging
import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import load_dotenv

SERVICE_ROOT = Path(__file__).resolve().parents[1]

_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


@dataclass(frozen=True)
class Settings:
    max_workers: int
    log_level: str
    cache_dir: Path
    spectrum_cache: bool
    plots: bool
    cg_max_iter: int
    power_iterations: int

    @property
    def log_level_value(self) -> int:
        return getattr(logging, self.log_level, logging.INFO)


def load_settings(*, dotenv: bool = True) -> Settings:
    if dotenv:
        load_dotenv(override=False)

    cpu_count = os.cpu_count() or 2
    max_workers_default = min(4, cpu_count)
    max_workers = _parse_int(os.getenv("JUMPWAVE_WORKERS"), max_workers_default)
    log_level = os.getenv("JUMPWAVE_LOG_LEVEL", "INFO").strip().upper() or "INFO"
    if log_level not in _LOG_LEVELS:
        log_level = "INFO"
    cache_dir = Path(os.getenv("JUMPWAVE_CACHE_DIR", SERVICE_ROOT / "data" / "cache"))
    spectrum_cache = _env_bool(os.getenv("JUMPWAVE_SPECTRUM_CACHE", "1"))
    plots = _env_bool(os.getenv("JUMPWAVE_PLOTS", "1"))
    cg_max_iter = _parse_int(os.getenv("JUMPWAVE_CG_MAX_ITER"), 2000)
    power_iterations = _parse_int(os.getenv("JUMPWAVE_POWER_ITERATIONS"), 50)

    if max_workers < 1:
        max_workers = 1
    if cg_max_iter < 1:
        cg_max_iter = 1
    if power_iterations < 10:
        power_iterations = 10

    return Settings(
        max_workers=max_workers,
        log_level=log_level,
        cache_dir=cache_dir,
        spectrum_cache=spectrum_cache,
        plots=plots,
        cg_max_iter=cg_max_iter,
        power_iterations=power_iterations,
    )


def _env_bool(value: str) -> bool:
    return str(value).strip().lower() in {"1", "true", "yes", "on"}


def _parse_int(raw: str | None, default: int) -> int:
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw.strip())
    except ValueError:
        return default
