"""
Configuration and Initialization Module

This module contains all configuration variables and environment settings
for the aging curve pipelines. Values come from the process environment
(optionally a .env file) and act as defaults for the command-line flags.
"""

import os
from datetime import datetime, timezone
from dotenv import load_dotenv, dotenv_values

from .errors import ConfigError

# Load environment variables
load_dotenv()

# Run start time for elapsed-time reporting
RUN_START_TIME = datetime.now(timezone.utc)

ENV_PREFIX = "AGECURVE_"

# -------------------------
# CONFIG / ENV
# -------------------------
SEED = int(os.getenv("AGECURVE_SEED", "2022"))
M_IMPUTATIONS = int(os.getenv("AGECURVE_M", "5"))
N_ITER = int(os.getenv("AGECURVE_ITERS", "30"))
MECHANISM = os.getenv("AGECURVE_MECHANISM", "early")
THRESHOLD = float(os.getenv("AGECURVE_THRESHOLD", "0.55"))
RETIRE_PROB = float(os.getenv("AGECURVE_RETIRE_PROB", "0.25"))
RETIRE_AGE = int(os.getenv("AGECURVE_RETIRE_AGE", "30"))
SPAN = float(os.getenv("AGECURVE_SPAN", "0.75"))
DEGREE = int(os.getenv("AGECURVE_DEGREE", "2"))
MIN_PA = int(os.getenv("AGECURVE_MIN_PA", "100"))
MIN_DEBUT = int(os.getenv("AGECURVE_MIN_DEBUT", "1985"))
AGE_MIN = int(os.getenv("AGECURVE_AGE_MIN", "21"))
AGE_MAX = int(os.getenv("AGECURVE_AGE_MAX", "39"))
THREADS = int(os.getenv("AGECURVE_THREADS", "1"))
N_PLAYERS = int(os.getenv("AGECURVE_N_PLAYERS", "1000"))
SCALE_MIN = float(os.getenv("AGECURVE_SCALE_MIN", "0"))
SCALE_MAX = float(os.getenv("AGECURVE_SCALE_MAX", "1.6"))
LEVEL = float(os.getenv("AGECURVE_LEVEL", "0.95"))
LMM_MAX_ITER = int(os.getenv("AGECURVE_LMM_MAX_ITER", "500"))
LMM_TOL = float(os.getenv("AGECURVE_LMM_TOL", "1e-8"))
OUTPUT_DIR = os.getenv("AGECURVE_OUT", "output")
BATTING_PATH = os.getenv("AGECURVE_BATTING", "")
PEOPLE_PATH = os.getenv("AGECURVE_PEOPLE", "")
FIT_PATH = os.getenv("AGECURVE_FIT", "")

# Bundled generative fit for the simulation study
REFERENCE_FIT_PATH = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "reference_fit.txt"
)


def load_config_file(path):
    """Read a dotenv-format config file and return its AGECURVE_ keys without the prefix, lowercased"""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    out = {}
    for key, value in values.items():
        if value is None or not key.startswith(ENV_PREFIX):
            continue
        out[key[len(ENV_PREFIX):].lower()] = value
    return out


def write_manifest(path, params):
    """Write parameters in the same dotenv format load_config_file reads"""
    lines = [f"{ENV_PREFIX}{key.upper()}={params[key]}" for key in sorted(params)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def get_readable_time(seconds):
    """Convert seconds to readable time format"""
    if seconds < 60:
        return f"{seconds:.1f}s"
    elif seconds < 3600:
        minutes = int(seconds // 60)
        secs = int(seconds % 60)
        return f"{minutes}m {secs}s"
    else:
        hours = int(seconds // 3600)
        minutes = int((seconds % 3600) // 60)
        return f"{hours}h {minutes}m"
