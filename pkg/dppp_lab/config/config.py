import os

from dotenv import load_dotenv

load_dotenv()

# Monte Carlo defaults, overridable from the environment or a .env file
DEFAULT_SEED = int(os.getenv("DPPP_LAB_SEED", "42"))
DEFAULT_SAMPLES = int(os.getenv("DPPP_LAB_SAMPLES", "100000"))
MC_REPLICA_SIZE = int(os.getenv("DPPP_LAB_REPLICA_SIZE", "10000"))
MAX_WORKERS = int(os.getenv("DPPP_LAB_MAX_WORKERS", "4"))

# Kernel construction
SYMMETRY_TOLERANCE = 1e-10
SPECTRUM_TOLERANCE = 1e-12
CONDITION_WARNING = 1e12
TRACE_SERIES_TOLERANCE = 1e-15
TRACE_SERIES_MAX_TERMS = 10_000

# Size limits of the exact evaluation paths
PERMUTATION_SUM_LIMIT = int(os.getenv("DPPP_LAB_PERMUTATION_LIMIT", "12"))
PERMUTATION_TABLE_LIMIT = 8  # larger n go through the cycle-cover recursion
RYSER_LIMIT = int(os.getenv("DPPP_LAB_RYSER_LIMIT", "30"))
PARTITION_LIMIT = 10
EXACT_PMF_LIMIT = 12
MULTISET_PMF_LIMIT = 200_000  # number of multiplicity vectors
EXPANSION_ORDER_LIMIT = 8
THINNING_ATOM_LIMIT = 12

# Numerical floors
JANOSSY_CLAMP_TOLERANCE = 1e-12
DETERMINANT_FLOOR = 1e-13
ZERO_DENOMINATOR_TOLERANCE = 1e-14

# Flows
FLOW_MAX_STEP = 0.01
FLOW_T_MAX = 1.0
FLOW_GROUP_TOLERANCE = 1e-6
GRADIENT_FD_STEP = 1e-4
GRADIENT_MISMATCH_TOLERANCE = 1e-5
LOG_DENSITY_FD_STEP = 1e-6

# Verification gates
MC_SIGMA = 3.0
IBP_BIAS_ALLOWANCE = 0.05
CHI2_MIN_EXPECTED = 5.0
POISSON_RATIO_WINDOW = (0.4, 0.6)

REPORT_VERSION = "1.0"
DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(__file__), "default_suite.json")

# Checks the suite runner knows about, in their default execution order
CHECK_NAMES = [
    "fredholm",
    "expansion",
    "janossy",
    "factorization",
    "cox",
    "sampler",
    "thinning",
    "quasi_invariance",
    "gradient",
    "hypothesis_bound",
    "ibp",
    "poisson_limit",
    "error_scaling",
]


def get_check_names():
    """
    Get the names of all checks the suite runner can execute.

    Returns:
        list: check names in default execution order
    """
    return list(CHECK_NAMES)
