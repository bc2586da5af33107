import logging
import os

LOG_LEVEL_ENV = "WATLAB_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def resolve_level(level=None):
    """
    Level precedence: explicit argument, then WATLAB_LOG_LEVEL, then INFO.
    Unknown names fall back to INFO.
    """
    name = level or os.environ.get(LOG_LEVEL_ENV) or "INFO"
    return getattr(logging, str(name).upper(), logging.INFO)


def setup_logging(level=None):
    """
    Configure root logging once.
    Existing handlers are left alone; only the watlab logger level is adjusted.
    """
    level_value = resolve_level(level)
    root = logging.getLogger()
    if root.handlers:
        logging.getLogger("watlab").setLevel(level_value)
        return level_value

    logging.basicConfig(level=level_value, format=LOG_FORMAT)
    return level_value
