import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import orjson

from core.config import Settings, load_settings
from core.errors import JumpwaveError
from core.metrics import get_metrics, init_metrics

from . import __version__
from .outputs import OutputWriter, write_error
from .schema import load_config
from .tasks import TaskContext, prepare, run_task

logger = logging.getLogger(__name__)

INTERNAL_EXIT = 3


def _report(record: dict, root: Optional[Path]) -> int:
    sys.stderr.write(orjson.dumps(record).decode("utf-8") + "\n")
    if root is not None:
        write_error(root, record)
    return int(record["exit_code"])


def _fail(exc: JumpwaveError, root: Optional[Path]) -> int:
    logger.error("%s: %s", exc.code, exc.detail)
    return _report(exc.to_record(), root)


def run(config_path: Path, out: Optional[Path], settings: Settings) -> int:
    try:
        config = load_config(config_path)
    except JumpwaveError as exc:
        return _fail(exc, out)
    root = out if out is not None else Path(config.output)
    try:
        prepared = prepare(config)
    except JumpwaveError as exc:
        return _fail(exc, root)

    init_metrics()
    root.mkdir(parents=True, exist_ok=True)
    (root / "error.json").unlink(missing_ok=True)
    writer = OutputWriter(
        root,
        provenance={"task": config.task.name, "config_sha256": config.digest(), "seed": config.seed},
        plots=settings.plots if config.plots is None else config.plots,
    )
    ctx = TaskContext(prepared, settings, writer)
    started = time.perf_counter()
    try:
        summary = run_task(ctx)
    except JumpwaveError as exc:
        return _fail(exc, root)
    except Exception as exc:  # noqa: BLE001
        logger.exception("Task %s failed unexpectedly", config.task.name)
        record = {"code": "INTERNAL", "detail": str(exc), "exit_code": INTERNAL_EXIT, "context": {}}
        return _report(record, root)

    writer.text("config.echo.yaml", config.echo())
    metrics = get_metrics().snapshot().as_dict()
    writer.manifest(
        {
            "task": config.task.name,
            "config": config.model_dump(mode="json"),
            "config_sha256": config.digest(),
            "summary": summary,
            "timings": {"total_seconds": time.perf_counter() - started, **metrics},
        }
    )
    logger.info("Task %s finished in %s", config.task.name, root)
    return 0


def validate(config_path: Path) -> int:
    try:
        prepare(load_config(config_path))
    except JumpwaveError as exc:
        return _fail(exc, None)
    print("ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jumpwave", description="Waves across a coefficient jump: experiment runner.")
    commands = parser.add_subparsers(dest="command", required=True)
    run_parser = commands.add_parser("run", help="Run the experiment described by a YAML config")
    run_parser.add_argument("config", type=Path)
    run_parser.add_argument("--out", type=Path, default=None, help="Output directory (overrides the config)")
    validate_parser = commands.add_parser("validate", help="Validate a config without computing")
    validate_parser.add_argument("config", type=Path)
    commands.add_parser("version", help="Print the package version")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_settings()
    logging.basicConfig(
        level=settings.log_level_value,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)
    if args.command == "version":
        print(__version__)
        return 0
    if args.command == "validate":
        return validate(args.config)
    return run(args.config, args.out, settings)


if __name__ == "__main__":
    sys.exit(main())
