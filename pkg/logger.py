"""
Logging configuration for the equilibrium solver
"""
import logging
from datetime import datetime
from pathlib import Path

LEVELS = {
    'off': None,
    'info': logging.INFO,
    'debug': logging.DEBUG,
}


def level_from_env(value):
    """
    Map an MFG_LOG value to a logging level

    Args:
        value: One of 'off', 'info', 'debug' (case-insensitive)

    Returns:
        Logging level, or None when logging is switched off
    """
    key = (value or 'info').strip().lower()
    if key not in LEVELS:
        raise ValueError(f"MFG_LOG must be one of {', '.join(LEVELS)}, got '{value}'")
    return LEVELS[key]


def setup_logging(log_level=logging.INFO, log_dir='logs'):
    """
    Set up logging configuration

    Args:
        log_level: Logging level (default: INFO); None disables logging
        log_dir: Directory for the timestamped log file
    """
    if log_level is None:
        logging.disable(logging.CRITICAL)
        return logging.getLogger(__name__)
    logging.disable(logging.NOTSET)

    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)

    timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
    log_file = log_dir / f'mfg_{timestamp}.log'

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file, encoding='utf-8'),
            logging.StreamHandler()
        ],
        force=True,
    )

    logger = logging.getLogger(__name__)
    logger.info(f"Logging initialized. Log file: {log_file}")

    return logger


def get_logger(name):
    """
    Get a logger instance

    Args:
        name: Logger name (typically __name__)

    Returns:
        Logger instance
    """
    return logging.getLogger(name)
