import math
from pathlib import Path

import orjson
import pytest

from cli.main import main, run
from cli.schema import load_config
from cli.tasks import prepare
from core.config import load_settings

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"
REFERENCE_CONFIGS = sorted(CONFIG_DIR.glob("*.yaml"))


def _summary(root: Path) -> dict:
    return orjson.loads((root / "manifest.json").read_bytes())["summary"]


pytestmark = pytest.mark.usefixtures("lab_env")


def test_reference_configs_present():
    names = {path.stem for path in REFERENCE_CONFIGS}
    assert {"distance_1d", "simulate_energy", "uc_check", "hum", "cost_curve", "trapping_critical"} <= names


@pytest.mark.parametrize("path", REFERENCE_CONFIGS, ids=lambda p: p.stem)
def test_reference_config_validates(path):
    config = load_config(path)
    prepared = prepare(config)

    assert prepared.grid.dim == prepared.medium.dim
    assert config.output.startswith("out/")


def test_validate_command_accepts_reference_config(capsys):
    assert main(["validate", str(CONFIG_DIR / "hum.yaml")]) == 0
    assert capsys.readouterr().out.strip() == "ok"


@pytest.mark.slow
def test_distance_reference_run(tmp_path):
    root = tmp_path / "distance"
    assert run(CONFIG_DIR / "distance_1d.yaml", root, load_settings()) == 0

    lines = (root / "distance.csv").read_text(encoding="utf-8").splitlines()
    values = [line for line in lines if not line.startswith("#")]
    assert float(values[1].split(",")[-1]) == pytest.approx(0.75, abs=1e-3)


@pytest.mark.slow
def test_weight_reference_runs(tmp_path):
    settings = load_settings()
    assert run(CONFIG_DIR / "carleman_weights.yaml", tmp_path / "above", settings) == 0
    assert run(CONFIG_DIR / "carleman_weights_below.yaml", tmp_path / "below", settings) == 0

    assert _summary(tmp_path / "above")["cover_holds"] is True
    assert 0.0 < _summary(tmp_path / "above")["cover_overlap"] < 1.0
    assert _summary(tmp_path / "below")["cover_holds"] is False


@pytest.mark.slow
def test_cost_curve_reference_run(tmp_path):
    root = tmp_path / "cost"
    assert run(CONFIG_DIR / "cost_curve.yaml", root, load_settings()) == 0

    summary = _summary(root)
    assert summary["slope"] > 0
    assert summary["fit_residual"] >= 0


@pytest.mark.slow
def test_uc_check_reference_run(tmp_path):
    root = tmp_path / "uc"
    assert run(CONFIG_DIR / "uc_check.yaml", root, load_settings()) == 0

    summary = _summary(root)
    assert summary["feasible"] is True
    assert summary["below_threshold"] is False
    # 0.4 through the slow side plus 0.5 at speed 2
    assert summary["largest_distance"] == pytest.approx(0.65, abs=1e-2)
    assert summary["threshold_contrast"] is True


@pytest.mark.slow
def test_hum_reference_run(tmp_path):
    root = tmp_path / "hum"
    assert run(CONFIG_DIR / "hum.yaml", root, load_settings()) == 0

    summary = _summary(root)
    assert summary["achieved"] is True
    assert summary["ratio"] <= 0.5
    assert summary["cost"] > 0
    assert (root / "control_profile.csv").exists()


@pytest.mark.slow
def test_stability_reference_run(tmp_path):
    root = tmp_path / "stability"
    assert run(CONFIG_DIR / "stability.yaml", root, load_settings()) == 0

    summary = _summary(root)
    assert math.isfinite(summary["exponential_constant"]) and summary["exponential_constant"] > 0
    assert math.isfinite(summary["log_constant"]) and summary["log_constant"] > 0


@pytest.mark.slow
def test_trapping_reference_runs(tmp_path):
    settings = load_settings()
    assert run(CONFIG_DIR / "trapping_normal.yaml", tmp_path / "normal", settings) == 0
    assert run(CONFIG_DIR / "trapping_critical.yaml", tmp_path / "critical", settings) == 0

    normal = _summary(tmp_path / "normal")
    assert normal["transmitted"] == pytest.approx(normal["analytic_transmitted"], rel=1e-2)
    assert normal["closure"] <= 1e-3
    critical = _summary(tmp_path / "critical")
    assert critical["analytic_transmitted"] == 0.0
    assert critical["transmitted"] <= 1e-2
    assert critical["closure"] <= 1e-3
    assert "closure" in (tmp_path / "critical" / "trapping.csv").read_text(encoding="utf-8")
