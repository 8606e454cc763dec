import logging

from config.settings import (CLI_LOG_FILE, CORE_LOG_FILE, LOG_LEVEL,
                             LOGGING_FORMAT, makefile)

# log files live in directories that may not exist on a fresh checkout
makefile()

logging.basicConfig(
    filename=CORE_LOG_FILE,
    level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
    format=LOGGING_FORMAT,
)

core_logger = logging.getLogger(f"[CORE] - {__name__}")

# cli logger (Separate Logger)
cli_logger = logging.getLogger(f"[CLI] - {__name__}")
cli_logger.setLevel(logging.INFO)

# create a file handler for the cli logger
cli_file_handler = logging.FileHandler(CLI_LOG_FILE)
cli_file_handler.setFormatter(logging.Formatter(LOGGING_FORMAT))

# keep command-line records out of the numerical log
cli_logger.propagate = False

cli_logger.handlers = []
cli_logger.addHandler(cli_file_handler)
