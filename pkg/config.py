# Configuration for the application
import math

# Lorenz parameters (sigma, R, b); "p/q" strings are divided in-context
LORENZ_PARAMS = ("10", "28", "8/3")

# Initial condition of the long reference run
INITIAL_CONDITION = ("-15.8", "-17.48", "35.64")

# Precision and order
MIN_DECIMAL_DIGITS = 16
DEFAULT_DIGITS = 100
DEFAULT_ORDER = 120
GUARD_DIGITS = 5  # extra digits written to checkpoints for bit-exact resume
MAX_BINARY_EXPONENT = 1 << 40

# Stepsize rule
STEP_SAFETY = 0.993
STEP_DAMPING = math.exp(-2.0)
DEFAULT_FIXED_TAU = 0.01

# Output
DEFAULT_T_END = 10.0
DEFAULT_OUTPUT_EVERY = 1.0
DEFAULT_OUTPUT_DIGITS = 60
LOG_EVERY_STEPS = 500

# Reduction layout
MIN_BLOCK_SIZE = 1
BLOCKS_PER_WORKER = 4  # auto block size leaves at least this many blocks per worker at i = N/2
SLOT_PADDING = 8

# Decoupling criterion and calibration pairing
REQUIRED_DIGITS = 30
COMPARISON_GRID = 1.0
ORDER_PAIR_MIN_INCREMENT = 10
ORDER_PAIR_FRACTION = 0.10
DIGITS_PAIR_INCREMENT = 20
# Shared "large enough" companions of a sweep
LARGE_ORDER_FACTOR = 1.3
LARGE_ORDER_OFFSET = 10
LARGE_DIGITS_FACTOR = 1.4
LARGE_DIGITS_OFFSET = 40

DEFAULT_K_SWEEP = (60, 80, 100, 120, 140)
DEFAULT_N_SWEEP = (30, 40, 50, 60, 70)
DEFAULT_RESERVES = (0.05, 0.10)

# Tc-K dependence of the long reference run
PUBLISHED_FIT_K = (2.55, -81.0)

# Bench
BENCH_STEPS = 20

# Reference solution at t = 11000 (60 correct digits)
REFERENCE_TIME = "11000"
REFERENCE_STATE = (
    "6.10629269055689971917782003095370055267185885053970862735508",
    "-3.33795350928712428173974978144552360814210542698512462640748",
    "34.1603471532583648867450334710712261840913307358242610005285",
)
