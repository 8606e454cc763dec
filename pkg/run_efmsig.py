import signal
import sys

from config.logging import cli_logger as logger
from config.settings import makefile
from efmsig.app import Application
from shared.flags import EXIT_INTERRUPTED

if __name__ == "__main__":
    # create the output and log directories
    makefile()

    app = Application()

    def signal_handler(sig, frame):
        app.stop()
        logger.warning("Exiting application...")
        sys.exit(EXIT_INTERRUPTED)

    signal.signal(signal.SIGINT, signal_handler)

    sys.exit(app.dispatch(sys.argv[1:]))
