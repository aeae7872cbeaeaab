import logging
import os

from config import Config


LOG_PATH_TXT = Config.LOG_PATH

#-- function to initialize a logger that writes log to a file
def setup_logger(name: str, log_file: str = LOG_PATH_TXT, level=Config.LOG_LEVEL):
    log_dir = os.path.dirname(log_file)
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)

    formatter = logging.Formatter('%(asctime)s | %(name)s | %(levelname)s | %(message)s')
    handler = logging.FileHandler(log_file)
    handler.setFormatter(formatter)

    logger = logging.getLogger(name)
    logger.setLevel(level)

    if not logger.hasHandlers():
        logger.addHandler(handler)

    return logger

logger = setup_logger("Transitions")

def format_transition(tick: int, node: int, old: str, new: str, event: str) -> str:
    return f"t={tick} node={node} {old}->{new} event={event}"

def log_transition(tick: int, node: int, old: str, new: str, event: str, profile: str = None):
    # Optional part
    profile_str = f" profile={profile}" if profile else ""

    # Final message
    message = format_transition(tick, node, old, new, event) + profile_str
    logger.info(message)
    return message
