from os import getenv, makedirs, path
from typing import List, Union

from dotenv import load_dotenv

load_dotenv()

# dense storage cap, counted in coefficients over all levels
COEFFICIENT_BUDGET = int(getenv("EFMSIG_COEFFICIENT_BUDGET", "10000000"))

# reproducibility and worker pool
DEFAULT_SEED = int(getenv("EFMSIG_SEED", "20240917"))
THREADS = int(getenv("EFMSIG_THREADS", "4"))
PATHS_PER_STREAM = int(getenv("EFMSIG_PATHS_PER_STREAM", "1024"))
STEPS_PER_BLOCK = int(getenv("EFMSIG_STEPS_PER_BLOCK", "4096"))

# infinite past emulation: burn-in = BURN_IN_FACTOR / min(lambda)
BURN_IN_FACTOR = float(getenv("EFMSIG_BURN_IN_FACTOR", "10.0"))

# numerical tolerances
MU_MERGE_RTOL = 1e-12
C_TAYLOR_THRESHOLD = 1e-8
BLOWUP_THRESHOLD = 1e8
STATIONARY_TOL = 1e-8
VARIANCE_CLIP_TOL = 1e-10
LANGEVIN_LIMIT = 1e6
ELASTIC_NET_TOL = 1e-10
ELASTIC_NET_MAX_SWEEPS = 10_000

# logging settings
LOGGING_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_LEVEL = getenv("EFMSIG_LOG_LEVEL", "INFO")
CORE_LOG_FILE = getenv("EFMSIG_LOG_FILE", path.join("logs", "efmsig.log"))
CLI_LOG_FILE = getenv("EFMSIG_CLI_LOG_FILE", path.join("logs", "cli.log"))

ROOT_PATH = path.join(path.dirname(path.abspath(__name__)))
OUTPUT_DIR = getenv("EFMSIG_OUTPUT_DIR", path.join(ROOT_PATH, "output"))


def makefile(dirpath: Union[str, List[str]] = []):
    """
    Ensures one or more output directories exist, together with the directories
    holding the log files. Existing directories are left untouched.
    """
    paths = [dirpath] if isinstance(dirpath, str) else list(dirpath)
    paths.extend([path.dirname(CORE_LOG_FILE), path.dirname(CLI_LOG_FILE)])

    for folder in paths:
        if not isinstance(folder, str) or not folder:
            continue  # skip invalid entries

        if path.isdir(folder):
            continue

        makedirs(folder, exist_ok=True)
