"""Logging configuration for the PISR engine.

We configure a global logger at import time so that all modules can do:

    from pisr.core.logging import logger
    logger.info("...")

Notes
-----
- Logging level and format are set once, globally, using `basicConfig`.
- The level comes from `PISR_LOG_LEVEL` (see config.py) and defaults to INFO.
- Log format includes timestamp, level, logger name, and message.
"""

import logging

from pisr.core.config import settings

logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)

logger = logging.getLogger("pisr")
