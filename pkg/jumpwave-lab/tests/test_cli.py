import csv
import io
from pathlib import Path

import orjson
import pytest

from cli import __version__
from cli.main import main
from cli.schema import parse_config
from core.errors import ConfigurationError

MEDIUM = """
medium:
  domain: {kind: interval, bounds: [[0.0, 1.0]]}
  interface: {kind: point, position: 0.5}
  c_minus: 1.0
  c_plus: 4.0
"""

DISTANCE = MEDIUM + """
grid: {resolution: 0.0025}
task:
  name: distance
  pairs: [[[0.0], [1.0]]]
plots: false
"""

SPECTRUM = MEDIUM + """
grid: {resolution: 0.125}
task: {name: spectrum, k: 3}
"""

SIMULATE = MEDIUM + """
grid: {resolution: 0.0625}
task:
  name: simulate
  init: {kind: mode, k: 1}
  T: 0.5
  probes: [[0.75]]
  transmission: true
plots: false
"""


pytestmark = pytest.mark.usefixtures("lab_env")


def _write_config(tmp_path: Path, text: str, name: str = "config.yaml") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def _read_rows(path: Path):
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def test_distance_run_writes_csv_and_manifest(tmp_path: Path):
    config = _write_config(tmp_path, DISTANCE)
    out = tmp_path / "run"
    assert main(["run", str(config), "--out", str(out)]) == 0
    rows = _read_rows(out / "distance.csv")
    assert float(rows[0]["distance"]) == pytest.approx(0.75, abs=1e-3)
    header = (out / "distance.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "# task: distance"
    manifest = orjson.loads((out / "manifest.json").read_bytes())
    assert manifest["task"] == "distance"
    assert [entry["path"] for entry in manifest["files"]] == ["distance.csv", "config.echo.yaml"]
    assert "phase_seconds" in manifest["timings"]
    assert not (out / "error.json").exists()


def test_reruns_are_byte_identical(tmp_path: Path):
    config = _write_config(tmp_path, DISTANCE)
    assert main(["run", str(config), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(config), "--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "distance.csv").read_bytes()
    second = (tmp_path / "b" / "distance.csv").read_bytes()
    assert first == second


def test_malformed_config_exits_with_usage_code(tmp_path: Path):
    config = _write_config(tmp_path, MEDIUM + "grid: {resolution: 0.1}\ntask: {name: nope}\n")
    out = tmp_path / "run"
    assert main(["run", str(config), "--out", str(out)]) == 2
    record = orjson.loads((out / "error.json").read_bytes())
    assert record["code"] == "CONFIGURATION"
    assert record["exit_code"] == 2
    assert record["context"]["errors"]


def test_invalid_geometry_is_reported_before_compute(tmp_path: Path):
    text = DISTANCE.replace("position: 0.5", "position: 1.5")
    out = tmp_path / "run"
    assert main(["run", str(_write_config(tmp_path, text)), "--out", str(out)]) == 2
    record = orjson.loads((out / "error.json").read_bytes())
    assert record["code"] == "GEOMETRY"
    assert not (out / "manifest.json").exists()


def test_missing_config_file(tmp_path: Path, capsys):
    assert main(["run", str(tmp_path / "absent.yaml")]) == 2
    assert "CONFIGURATION" in capsys.readouterr().err


def test_spectrum_run_uses_cache(tmp_path: Path):
    config = _write_config(tmp_path, SPECTRUM)
    out = tmp_path / "run"
    assert main(["run", str(config), "--out", str(out)]) == 0
    assert main(["run", str(config), "--out", str(out)]) == 0
    rows = _read_rows(out / "spectrum.csv")
    assert [row["k"] for row in rows] == ["1", "2", "3"]
    manifest = orjson.loads((out / "manifest.json").read_bytes())
    assert manifest["timings"]["cache_hits"] == 1


def test_simulate_run_writes_energy_and_transmission(tmp_path: Path):
    out = tmp_path / "run"
    assert main(["run", str(_write_config(tmp_path, SIMULATE)), "--out", str(out)]) == 0
    energy = [float(row["energy"]) for row in _read_rows(out / "energy.csv")]
    assert max(energy) - min(energy) <= 1e-10 * energy[0]
    assert (out / "probes.csv").exists()
    assert (out / "transmission.csv").exists()
    assert (out / "config.echo.yaml").exists()


def test_validate_and_version(tmp_path: Path, capsys):
    assert main(["validate", str(_write_config(tmp_path, DISTANCE))]) == 0
    assert capsys.readouterr().out.strip() == "ok"
    assert main(["version"]) == 0
    assert capsys.readouterr().out.strip() == __version__


def test_parse_config_rejects_unknown_keys():
    with pytest.raises(ConfigurationError):
        parse_config(DISTANCE + "extra: 1\n")
    with pytest.raises(ConfigurationError):
        parse_config("- just\n- a list\n")


def test_config_digest_is_stable():
    assert parse_config(DISTANCE).digest() == parse_config(DISTANCE).digest()
    assert parse_config(DISTANCE).digest() != parse_config(DISTANCE.replace("0.0025", "0.005")).digest()
