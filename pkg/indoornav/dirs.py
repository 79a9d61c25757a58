import os
from pathlib import Path

from appdirs import AppDirs

from .__about__ import APP_NAME, AUTHOR

appdir = AppDirs(APP_NAME, AUTHOR)

CONFIG_DIR = Path(appdir.user_config_dir)
LOGS_DIR = Path(appdir.user_log_dir)
DATA_DIR = Path(appdir.user_data_dir)

OUTPUT_DIR_ENV = "INDOORNAV_OUTPUT_DIR"


def default_output_dir() -> Path:
    """Output directory used when a command is not given `--output-dir`.

    The `INDOORNAV_OUTPUT_DIR` environment variable takes precedence over
    the per-user data directory.
    """
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    return DATA_DIR / "runs"
