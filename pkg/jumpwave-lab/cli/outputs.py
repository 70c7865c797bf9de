import csv
import hashlib
import io
import logging
import numbers
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import orjson  # noqa: E402

logger = logging.getLogger(__name__)

_VERSIONED = ("numpy", "scipy", "pydantic", "matplotlib", "jumpwave")

plt.rcParams["svg.hashsalt"] = "jumpwave"
plt.rcParams["svg.fonttype"] = "none"


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    tmp_path.write_bytes(data)
    tmp_path.replace(path)


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in _VERSIONED:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


@dataclass
class OutputWriter:
    """Collects the files a run writes, with their sha256 for the manifest."""

    root: Path
    provenance: Mapping[str, object]
    plots: bool = True
    written: List[Dict[str, str]] = field(default_factory=list)

    def _record(self, path: Path, data: bytes) -> Path:
        atomic_write(path, data)
        self.written.append({"path": path.name, "sha256": hashlib.sha256(data).hexdigest()})
        logger.info("Wrote %s", path)
        return path

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[object]], **extra) -> Path:
        buffer = io.StringIO()
        for key, value in {**self.provenance, **extra}.items():
            buffer.write(f"# {key}: {value}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])
        return self._record(self.root / name, buffer.getvalue().encode("utf-8"))

    def text(self, name: str, content: str) -> Path:
        return self._record(self.root / name, content.encode("utf-8"))

    def plot(
        self,
        name: str,
        x: Sequence[float],
        series: Mapping[str, Sequence[float]],
        *,
        xlabel: str,
        ylabel: str,
        logx: bool = False,
        logy: bool = False,
    ) -> Optional[Path]:
        if not self.plots:
            return None
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, values in series.items():
            ax.plot(x, values, marker="o", markersize=3, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        if len(series) > 1:
            ax.legend()
        fig.tight_layout()
        buffer = io.BytesIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
        plt.close(fig)
        return self._record(self.root / name, buffer.getvalue())

    def manifest(self, payload: Mapping[str, object]) -> Path:
        body = {**payload, "files": list(self.written), "versions": package_versions()}
        data = orjson.dumps(body, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY)
        path = self.root / "manifest.json"
        atomic_write(path, data)
        return path


def write_error(root: Path, record: Mapping[str, object]) -> Path:
    path = root / "error.json"
    atomic_write(path, orjson.dumps(record, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    return path
