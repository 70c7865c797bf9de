#!/usr/bin/env python3
"""Run every reference config and print one summary line per experiment."""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List

import orjson

LAB_ROOT = Path(__file__).resolve().parents[1]
if str(LAB_ROOT) not in sys.path:
    sys.path.insert(0, str(LAB_ROOT))

from cli.main import run  # noqa: E402
from core.config import load_settings  # noqa: E402


def _summarize(root: Path) -> str:
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        error_path = root / "error.json"
        if error_path.exists():
            record = orjson.loads(error_path.read_bytes())
            return f"{record.get('code')}: {record.get('detail')}"
        return "no manifest"
    summary: Dict = orjson.loads(manifest_path.read_bytes()).get("summary") or {}
    parts: List[str] = []
    for key, value in summary.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.4g}")
        elif isinstance(value, (int, bool, str)):
            parts.append(f"{key}={value}")
    return " ".join(parts)


def main() -> None:
    parser = argparse.ArgumentParser(description="Run the reference experiment sweep.")
    parser.add_argument("--configs", default=str(LAB_ROOT / "configs"))
    parser.add_argument("--out", default=str(LAB_ROOT / "out" / "acceptance"))
    parser.add_argument("--only", action="append", default=[], help="Run only configs whose name contains this")
    args = parser.parse_args()

    settings = load_settings()
    logging.basicConfig(level=settings.log_level_value, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)

    configs = sorted(Path(args.configs).glob("*.yaml"))
    if args.only:
        configs = [path for path in configs if any(token in path.stem for token in args.only)]
    if not configs:
        raise SystemExit(f"no configs under {args.configs}")

    failures = 0
    rows = []
    for path in configs:
        root = Path(args.out) / path.stem
        started = time.perf_counter()
        code = run(path, root, settings)
        elapsed = time.perf_counter() - started
        failures += int(code != 0)
        rows.append((path.stem, code, elapsed, _summarize(root)))

    width = max(len(name) for name, *_ in rows)
    for name, code, elapsed, summary in rows:
        status = "ok" if code == 0 else f"exit {code}"
        print(f"{name:<{width}}  {status:<7} {elapsed:8.1f}s  {summary}")
    print(f"{len(rows) - failures}/{len(rows)} experiments completed")
    if failures:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
