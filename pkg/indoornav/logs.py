import sys

from loguru import logger

from .config import LoggingSettings
from .dirs import LOGS_DIR as LOGS_DIR  # explicit re-export

LOG_FILE = LOGS_DIR / "indoornav.log"
STRUCTLOG_FILE = LOGS_DIR / "indoornav.structlog"


LOGGING_INIT = False


def init_logging(config: LoggingSettings) -> None:
    global LOGGING_INIT
    if LOGGING_INIT:
        return

    try:
        _do_init_logging(config)
    except Exception as e:
        print(f"Failed to initialize logging: {e}")
        return
    else:
        LOGGING_INIT = True


def _do_init_logging(config: LoggingSettings) -> None:
    logger.remove()
    if config.console:
        logger.add(sys.stderr, level=config.level.value)
    if not config.enabled:
        return
    LOGS_DIR.mkdir(parents=True, exist_ok=True)
    logger.add(LOG_FILE, level=config.level.value)
    if config.structlog:
        logger.add(STRUCTLOG_FILE, level=config.level.value, serialize=True)
