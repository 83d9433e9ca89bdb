"""Stepsize selection: the two-trailing-terms rule and the fixed-step mode."""
import enum
import logging
import math
from dataclasses import dataclass

from config import DEFAULT_FIXED_TAU, STEP_DAMPING, STEP_SAFETY
from cns.errors import ConfigurationError, DegenerateSeriesError, MPOverflowError
from cns.lorenz_taylor import CoeffTable
from cns.mp_scalar import MPScalar, decompose

logger = logging.getLogger(__name__)


class StepMode(str, enum.Enum):
    VARIABLE = "variable"
    FIXED = "fixed"


@dataclass(frozen=True)
class StepRule:
    mode: StepMode = StepMode.VARIABLE
    fixed_tau: float = DEFAULT_FIXED_TAU
    safety: float = STEP_SAFETY
    damping: float = STEP_DAMPING

    def __post_init__(self):
        object.__setattr__(self, "mode", StepMode(self.mode))
        if not 0.0 < self.safety <= 1.0:
            raise ConfigurationError(f"safety factor must lie in (0, 1], got {self.safety}")
        if not (math.isfinite(self.fixed_tau) and self.fixed_tau > 0.0):
            raise ConfigurationError(f"fixed stepsize must be positive, got {self.fixed_tau}")
        if not self.damping > 0.0:
            raise ConfigurationError(f"damping must be positive, got {self.damping}")

    @classmethod
    def parse(cls, text: str) -> "StepRule":
        """'variable', 'fixed' or 'fixed:<tau>'."""
        mode, _, tau = text.strip().partition(":")
        try:
            mode = StepMode(mode.lower())
        except ValueError:
            raise ConfigurationError(f"unknown step mode {text!r}") from None
        if tau:
            if mode is StepMode.VARIABLE:
                raise ConfigurationError("variable mode takes no stepsize")
            try:
                return cls(mode, fixed_tau=float(tau))
            except ValueError:
                raise ConfigurationError(f"bad fixed stepsize in {text!r}") from None
        return cls(mode)

    @property
    def label(self) -> str:
        if self.mode is StepMode.FIXED:
            return f"fixed:{self.fixed_tau!r}"
        return "variable"


def trailing_norm(table: CoeffTable, k: int) -> MPScalar:
    """Infinity norm of X_k = (x_k, y_k, z_k)."""
    return max(abs(table.x[k]), abs(table.y[k]), abs(table.z[k]))


def inverse_root(norm: MPScalar, k: int) -> float:
    """(1 / norm)^(1/k) in double precision via norm = m * 2^e."""
    m, e = decompose(norm)
    try:
        return math.pow(2.0, -e / k) * math.pow(m, -1.0 / k)
    except OverflowError:
        raise MPOverflowError(f"(1/|X_{k}|)^(1/{k}) leaves the double range (exponent {e})") from None


def optimal_stepsize(table: CoeffTable, rule: StepRule) -> float:
    """tau = safety * damping * min((1/|X_{N-1}|)^(1/(N-1)), (1/|X_N|)^(1/N)).

    A vanishing trailing norm drops its term; when both vanish the series
    carries no scale and DegenerateSeriesError is raised.
    """
    order = table.order
    if order < 2:
        raise ConfigurationError(f"variable stepsize needs order >= 2, got {order}")
    if not table.complete:
        raise ConfigurationError("coefficient table is not completely filled")
    candidates = []
    for k in (order - 1, order):
        norm = trailing_norm(table, k)
        if norm.is_zero():
            logger.debug(f"[Step] |X_{k}| vanishes, term dropped")
            continue
        candidates.append(inverse_root(norm, k))
    if not candidates:
        raise DegenerateSeriesError(f"|X_{order - 1}| and |X_{order}| both vanish")
    return rule.safety * rule.damping * min(candidates)


def fixed_stepsize(rule: StepRule) -> float:
    """The constant tau of a fixed rule."""
    return rule.fixed_tau


def next_stepsize(table: CoeffTable, rule: StepRule) -> float:
    if rule.mode is StepMode.FIXED:
        return fixed_stepsize(rule)
    return optimal_stepsize(table, rule)
