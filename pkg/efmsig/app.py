# fmt: off
import platform
import sys
import time
from json import dumps
from os import path
from typing import List, Optional

import numpy as np
import scipy

from config.logging import cli_logger as logger
from config.logging import core_logger
from config.settings import OUTPUT_DIR, makefile
from efmsig import __version__
from efmsig.handler.commands import Commands
from efmsig.manager import BatchManager
from shared.errors import UsageError
from shared.flags import EXIT_BLOWUP, EXIT_IO, EXIT_OK, EXIT_USAGE
from shared.protocol import build_manifest
from utils.helpers import file_digest, save_json

# fmt: on

# flags whose values are input files, digested into the manifest
INPUT_FLAGS = ("input", "compare", "ell", "signal", "driver")


class Application:
    # Initialization

    def __init__(self):
        """Builds the command handler and the argument parser."""
        self.commands: Commands = Commands()
        self.parser = self.commands.build_parser()
        self.manager: BatchManager | None = None

    def dispatch(self, argv: List[str]) -> int:
        """
        Parses argv, runs the command and writes report.json and manifest.json
        into the output directory. Returns the exit code; errors are reported
        on stderr as JSON and never raised.
        """
        started = time.perf_counter()
        try:
            args = self.parser.parse_args(argv)
        except UsageError as e:
            return self.fail(EXIT_USAGE, e)
        except SystemExit as e:  # --help
            return int(e.code or 0)

        out = args.out or path.join(OUTPUT_DIR, args.command)
        try:
            makefile(out)
            with BatchManager(args.threads) as self.manager:
                report = self.commands.handle(args, out, self.manager)

            save_json(path.join(out, "report.json"), report)
            save_json(path.join(out, "manifest.json"), self.manifest(args, time.perf_counter() - started))
        except ArithmeticError as e:
            return self.fail(EXIT_BLOWUP, e)
        except OSError as e:
            return self.fail(EXIT_IO, e)
        except ValueError as e:
            return self.fail(EXIT_USAGE, e)
        except Exception as e:
            core_logger.exception(f"'{args.command}' failed unexpectedly")
            return self.fail(EXIT_IO, e)
        finally:
            self.manager = None

        print(render_table(report))
        logger.info(f"'{args.command}' finished, outputs in {out}")
        return EXIT_OK

    def stop(self):
        """Stops the worker pool of a running command."""
        if self.manager is not None:
            self.manager.shutdown()

    def fail(self, code: int, error: Exception) -> int:
        kind = type(error).__name__
        print(dumps({"error": kind, "message": str(error)}), file=sys.stderr)
        logger.error(f"{kind}: {error} (exit {code})")
        return code

    def manifest(self, args, wall_time: float) -> dict:
        flags = {key: value for key, value in vars(args).items() if key != "command"}
        digests = {
            getattr(args, name): file_digest(getattr(args, name))
            for name in INPUT_FLAGS
            if getattr(args, name, None)
        }
        versions = {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "efmsig": __version__,
        }
        return build_manifest(args.command, flags, getattr(args, "seed", None), versions, digests, wall_time)


def render_table(report: dict, prefix: str = "") -> str:
    """Scalar entries of a report, one `key  value` row each; nested dicts are flattened."""
    rows = []
    for key, value in report.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            nested = render_table(value, f"{name}.")
            if nested:
                rows.append(nested)
        elif isinstance(value, float):
            rows.append(f"{name:<32}{value:.6g}")
        elif value is None or isinstance(value, (bool, int, str)):
            rows.append(f"{name:<32}{value}")
        elif isinstance(value, list) and len(value) <= 8 and all(not isinstance(v, (dict, list)) for v in value):
            rows.append(f"{name:<32}" + ", ".join(str(v) for v in value))
    return "\n".join(rows)


def main(argv: Optional[List[str]] = None) -> int:
    return Application().dispatch(sys.argv[1:] if argv is None else argv)
