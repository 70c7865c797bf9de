import sys
from pathlib import Path

import pytest

LAB_ROOT = Path(__file__).resolve().parents[1]
if str(LAB_ROOT) not in sys.path:
    sys.path.insert(0, str(LAB_ROOT))


@pytest.fixture
def lab_env(monkeypatch, tmp_path: Path) -> Path:
    """Runner settings for tests: private spectrum cache, no plots, one worker."""
    cache_dir = tmp_path / "cache"
    monkeypatch.setenv("JUMPWAVE_CACHE_DIR", str(cache_dir))
    monkeypatch.setenv("JUMPWAVE_PLOTS", "0")
    monkeypatch.setenv("JUMPWAVE_WORKERS", "1")
    return cache_dir
