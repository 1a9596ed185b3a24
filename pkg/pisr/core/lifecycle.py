"""Run lifecycle hooks (startup/shutdown).

Every CLI command runs between these two hooks. They stay small so a command's
own work dominates its runtime.

Current responsibilities
------------------------
- on_startup: create the output directory and record the effective config.
- on_shutdown: export search metrics in Prometheus text format.
"""
from __future__ import annotations

from pathlib import Path

from pisr.core.config import RunConfig, dump_config, settings
from pisr.core.logging import logger
from pisr.observability import metrics

EFFECTIVE_CONFIG = "effective_config.yaml"
METRICS_FILE = "metrics.prom"


def on_startup(config: RunConfig, command: str) -> Path:
    """Prepare `<out>` and write `effective_config.yaml` into it."""
    out_dir = Path(config.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info("startup: %s -> %s", command, out_dir)
    return dump_config(config, out_dir / EFFECTIVE_CONFIG)


def on_shutdown(config: RunConfig) -> None:
    """Write `<out>/metrics.prom` when metrics export is enabled."""
    if settings.metrics_enabled:
        try:
            metrics.write_textfile(Path(config.paths.out_dir) / METRICS_FILE)
        except OSError as exc:
            logger.warning("could not write metrics: %s", exc)
    logger.info("shutdown")
