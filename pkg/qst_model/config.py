import os
from pathlib import Path

from dotenv import load_dotenv
from loguru import logger

# Load environment variables from .env file if it exists
load_dotenv()

# Paths
PROJ_ROOT = Path(__file__).resolve().parents[1]
logger.debug(f"PROJ_ROOT path is: {PROJ_ROOT}")

REPORTS_DIR = PROJ_ROOT / "reports"

SCHEMAS_DIR = Path(__file__).resolve().parent / "schemas"

# Environment-driven settings
THREADS = int(os.getenv("LQST_THREADS", "1"))
MAX_DIM = int(os.getenv("LQST_MAX_DIM", "64"))
LOG_LEVEL = os.getenv("LQST_LOG_LEVEL", "INFO")

# Numerical tolerances
HERMITIAN_TOL = 1e-8
PSD_TOL = 1e-8
FIDELITY_CLAMP_TOL = 1e-6
RANK_THRESHOLD = 1e-7
PMF_TOL = 1e-8

# Experiment defaults
N_QUBITS = 4
MEAS_COUNT = 103
SVT_TAUS = (2.0, 4.0, 6.0, 8.0, 10.0, 80.0)
SVT_DELTAS = (0.01, 0.1, 0.5, 2.982)
SVT_MAX_ITERS = 20000
SVT_REL_TOL = 1e-4
SVT_DIVERGENCE_BOUND = 1e6

INIT_STEP = 0.01
INIT_THRESHOLD = 0.01
# frequency vectors sum to one, so 0.01 * A*(b) stays below 0.01 and the first shrink
# would zero it
POVM_INIT_THRESHOLD = 1e-4
PAULI_MU, PAULI_EPSILON = 0.0, 1e-8
POVM_MU, POVM_EPSILON = 1e-8, 1e-4

ADAM_LR = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PATIENCE = 50

# If tqdm is installed, configure loguru with tqdm.write
# https://github.com/Delgan/loguru/issues/135
try:
    from tqdm import tqdm

    logger.remove()
    logger.add(lambda msg: tqdm.write(msg, end=""), colorize=True, level=LOG_LEVEL)
except ModuleNotFoundError:
    pass
