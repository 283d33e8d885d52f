from pathlib import Path

VERSION = "0.3.0"

# Paths
PROJECT_ROOT = Path(__file__).parent
OUTPUT_DIR = PROJECT_ROOT / "runs"

# Logging
LOG_ENV_VAR = "KSRS_LOG"
LOG_LEVELS = ["error", "info", "debug"]
DEFAULT_LOG_LEVEL = "info"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Network
N_BUFFERS = 4
ARRIVAL_RATE = 1.0
DEFAULT_DELTA = 0.2
ATOM = (0, 0, 0, 1)  # x*

# Engine
EVENT_CAP = 10**9
THIN_THRESHOLD = 10**6
RNG_BLOCK = 4096
FLUSH_RING_SIZE = 64

# Occupation histogram: integer bins up to HIST_INT_BINS, geometric above
HIST_INT_BINS = 4096
HIST_GEOM_RATIO = 2 ** (1 / 16)

# Regimes
CERTIFIED_DELTA_MAX = 1.3e-4
REGIMES = ["certified", "second-moment", "exploratory"]
SECOND_MOMENT_EXPONENT = 4.0

# Statistics
CONFIDENCE_LEVEL = 0.95
MIN_REGEN_CYCLES = 100
REGEN_BATCHES = 200
MIN_INNER_REPS = 100
MAX_REL_STDERR = 0.1
REPLICATION_BLOCK = 64  # replications per pool task; fixed so merges never depend on --threads
TAIL_CHUNK_CYCLES = 32
SUP_RATIO_MIN_TIME = 1.0
SUP_RATIO_GRID_RATIO = 2 ** 0.625

# Defaults per experiment
DEFAULT_SEED = 20240601
DEFAULT_REPS = 1000
DEFAULT_WINDOW_EPSILON = 0.09
DEFAULT_DRAIN_EPSILON = 0.3
DEFAULT_X4_LIST = [10, 20, 40, 80]
DEFAULT_KAPPA_LIST = [100, 1000, 10000]
DEFAULT_FLUID_HORIZON = 9.0
DEFAULT_FLUID_POINTS = 91
DEFAULT_TAIL_EVENTS = 10**6
DEFAULT_BURN_IN = 10**4
DEFAULT_SUP_RATIO_POINTS = 40
DEFAULT_LD_TIMES = [10.0, 20.0, 40.0, 80.0]
DEFAULT_PSI_KMAX = 1000
DEFAULT_MULTICYCLE_NMAX = 3
DEFAULT_MM1_N = 50
DEFAULT_MM1_MU = 1.1
DEFAULT_MM1_EPSILON = 0.1
DEFAULT_LD_NU = 1.0
DEFAULT_LD_EPSILON = 0.5
DEFAULT_DRAIN_N = 1000
DEFAULT_CASCADE_X4 = 40
DEFAULT_DRIFT_NORMS = [5, 10, 20, 40]
DEFAULT_DRIFT_P = 1
DEFAULT_INNER_REPS = 1000
DEFAULT_EMPTY_C2 = 2.0
DEFAULT_SIM_HORIZON = 100.0

# Stream ids, one per experiment family
STREAMS = {
    "simulate": 1,
    "mm1": 2,
    "ld": 3,
    "drain": 4,
    "holds_policy": 5,
    "holds_oracle": 6,
    "cascade": 7,
    "tail": 8,
    "drift": 9,
    "drift_boundary": 10,
    "fluid": 11,
    "empty": 12,
    "cycles": 13,
}

# CLI
SUBCOMMANDS = [
    "params", "psi", "simulate", "mm1", "ld", "drain", "holds",
    "cascade", "tail", "drift", "fluid", "empty", "cycles",
]
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_CAP = 3
