import logging
import os

LOGGER_NAME = 'apaths'


def setup_logging(log_level=logging.INFO, log_file=None, console=True):
    logger = logging.getLogger(LOGGER_NAME)

    # Clear any existing handlers to prevent duplication
    logger.handlers.clear()

    # Prevent propagation to root logger
    logger.propagate = False

    logger.setLevel(log_level)

    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    if log_file:
        directory = os.path.dirname(os.path.abspath(log_file))
        os.makedirs(directory, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    # Console handler writes to stderr
    if console:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

    if not logger.handlers:
        logger.addHandler(logging.NullHandler())

    return logger
