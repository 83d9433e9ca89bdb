"""Multiple-precision scalars bound to an explicit precision context.

Every value is an mpmath ``libmp`` tuple ``(sign, man, exp, bc)`` paired with
the :class:`PrecisionCtx` it was rounded to. All arithmetic goes through the
``libmp`` functions with an explicit precision and round-to-nearest, so no
global mpmath context is read or written and values can be shared freely
between worker threads.
"""
import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from mpmath.libmp import (
    fzero,
    from_float,
    from_int,
    from_str,
    mpf_abs,
    mpf_add,
    mpf_cmp,
    mpf_div,
    mpf_mul,
    mpf_neg,
    mpf_sub,
    round_nearest,
    to_float,
    to_rational,
    to_str,
)

from config import GUARD_DIGITS, MAX_BINARY_EXPONENT, MIN_DECIMAL_DIGITS
from cns.errors import ConfigurationError, ContextMismatchError, MPOverflowError, ParseError

RND = round_nearest
_DOUBLE_MANTISSA_BITS = 53


@dataclass(frozen=True)
class PrecisionCtx:
    """K exact decimal digits and the binary mantissa width that realizes them."""

    decimal_digits: int
    mantissa_bits: int = field(init=False)

    def __post_init__(self):
        if isinstance(self.decimal_digits, bool) or not isinstance(self.decimal_digits, int):
            raise ConfigurationError(f"decimal digits must be an integer, got {self.decimal_digits!r}")
        if self.decimal_digits < MIN_DECIMAL_DIGITS:
            raise ConfigurationError(
                f"decimal digits must be >= {MIN_DECIMAL_DIGITS}, got {self.decimal_digits}"
            )
        # ceil(K * log2(10)) computed exactly: 10**K is never a power of two
        object.__setattr__(self, "mantissa_bits", (10**self.decimal_digits).bit_length())

    @property
    def prec(self) -> int:
        return self.mantissa_bits

    def zero(self) -> "MPScalar":
        return MPScalar(fzero, self)

    def from_int(self, n: int) -> "MPScalar":
        return MPScalar(from_int(n, self.mantissa_bits, RND), self)

    def from_float(self, value: float) -> "MPScalar":
        if not math.isfinite(value):
            raise MPOverflowError(f"cannot bind non-finite value {value!r}")
        return MPScalar(from_float(value, self.mantissa_bits, RND), self)

    def parse(self, text: str) -> "MPScalar":
        return parse(text, self)


def make_ctx(decimal_digits: int) -> PrecisionCtx:
    """Context carrying K exact decimal digits; K below the minimum raises ConfigurationError."""
    return PrecisionCtx(decimal_digits)


class MPScalar:
    """Immutable multiple-precision real. Arithmetic requires identical contexts."""

    __slots__ = ("_mpf", "ctx")

    def __init__(self, mpf: tuple, ctx: PrecisionCtx):
        sign, man, exp, bc = mpf
        if man:
            if abs(exp + bc) > MAX_BINARY_EXPONENT:
                raise MPOverflowError(f"binary exponent {exp + bc} outside the supported range")
        elif mpf != fzero:
            raise MPOverflowError("infinities and NaN are not representable")
        object.__setattr__(self, "_mpf", mpf)
        object.__setattr__(self, "ctx", ctx)

    def __setattr__(self, name, value):
        raise AttributeError("MPScalar is immutable")

    @property
    def mpf(self) -> tuple:
        return self._mpf

    def _check(self, other: "MPScalar") -> int:
        if not isinstance(other, MPScalar):
            raise TypeError(f"expected MPScalar, got {type(other).__name__}")
        if other.ctx != self.ctx:
            raise ContextMismatchError(
                f"operands carry {self.ctx.decimal_digits} and {other.ctx.decimal_digits} digits"
            )
        return self.ctx.mantissa_bits

    def __add__(self, other: "MPScalar") -> "MPScalar":
        prec = self._check(other)
        return MPScalar(mpf_add(self._mpf, other._mpf, prec, RND), self.ctx)

    def __sub__(self, other: "MPScalar") -> "MPScalar":
        prec = self._check(other)
        return MPScalar(mpf_sub(self._mpf, other._mpf, prec, RND), self.ctx)

    def __mul__(self, other: "MPScalar") -> "MPScalar":
        prec = self._check(other)
        return MPScalar(mpf_mul(self._mpf, other._mpf, prec, RND), self.ctx)

    def __neg__(self) -> "MPScalar":
        return MPScalar(mpf_neg(self._mpf), self.ctx)

    def __abs__(self) -> "MPScalar":
        return MPScalar(mpf_abs(self._mpf), self.ctx)

    def div_uint(self, n: int) -> "MPScalar":
        return div_uint(self, n)

    def _cmp(self, other: "MPScalar") -> int:
        self._check(other)
        return mpf_cmp(self._mpf, other._mpf)

    def __lt__(self, other):
        return self._cmp(other) < 0

    def __le__(self, other):
        return self._cmp(other) <= 0

    def __gt__(self, other):
        return self._cmp(other) > 0

    def __ge__(self, other):
        return self._cmp(other) >= 0

    def __eq__(self, other):
        # bit-exact equality, context included
        if not isinstance(other, MPScalar):
            return NotImplemented
        return self.ctx == other.ctx and self._mpf == other._mpf

    def __hash__(self):
        return hash((self._mpf, self.ctx.decimal_digits))

    def is_zero(self) -> bool:
        return self._mpf == fzero

    def to_fraction(self) -> Fraction:
        p, q = to_rational(self._mpf)
        return Fraction(int(p), int(q))

    def __float__(self) -> float:
        return to_float(self._mpf, rnd=RND)

    def __repr__(self):
        return f"MPScalar({format_scalar(self, 20)!r}, digits={self.ctx.decimal_digits})"

    def __str__(self):
        return format_scalar(self)


class ArithOp(enum.Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"


def arith(a: MPScalar, b: MPScalar, op: ArithOp) -> MPScalar:
    """One correctly rounded operation in the shared context of a and b."""
    if op is ArithOp.ADD:
        return a + b
    if op is ArithOp.SUB:
        return a - b
    if op is ArithOp.MUL:
        return a * b
    raise ValueError(f"unsupported operation {op!r}")


def div_uint(a: MPScalar, n: int) -> MPScalar:
    """Correctly rounded a / n for a positive integer n."""
    if n == 0:
        raise ZeroDivisionError("div_uint by zero")
    if n < 0:
        raise ValueError(f"div_uint expects a positive integer, got {n}")
    if n == 1:
        return a
    prec = a.ctx.mantissa_bits
    return MPScalar(mpf_div(a._mpf, from_int(n), prec, RND), a.ctx)


def decompose(a: MPScalar) -> tuple[float, int]:
    """Split a into (mantissa, exponent) with a == mantissa * 2**exponent.

    For a >= 0 the mantissa lies in [0.5, 1). For negative a it carries the
    sign, so it lies in (-1, -0.5] and the identity still holds; callers that
    want the magnitude pass abs(a). The exponent is an exact Python integer,
    so values far outside the double range still normalize. The mantissa is
    truncated to 53 bits.
    """
    sign, man, exp, bc = a._mpf
    if not man:
        return 0.0, 0
    if bc > _DOUBLE_MANTISSA_BITS:
        mantissa = math.ldexp(man >> (bc - _DOUBLE_MANTISSA_BITS), -_DOUBLE_MANTISSA_BITS)
    else:
        mantissa = math.ldexp(man, -bc)
    return (-mantissa if sign else mantissa), exp + bc


def _to_text(a: MPScalar, digits: int) -> str:
    return to_str(a._mpf, digits, min_fixed=0, max_fixed=0, show_zero_exponent=True)


def format_scalar(a: MPScalar, digits: int | None = None) -> str:
    """Decimal text: sign, significand, 'e', base-10 exponent.

    With an explicit digit count the value is rounded to that many significant
    digits. Without one, the result is the shortest string of at most K plus
    guard digits that parses back to the identical value, so -15.8 prints as
    "-1.58e+1" rather than its binary expansion.
    """
    if digits is not None:
        return _to_text(a, digits)
    ctx = a.ctx
    # hi always holds a digit count whose text parses back to a
    lo, hi = 1, ctx.decimal_digits + GUARD_DIGITS
    while lo < hi:
        mid = (lo + hi) // 2
        if from_str(_to_text(a, mid), ctx.mantissa_bits, RND) == a._mpf:
            hi = mid
        else:
            lo = mid + 1
    return _to_text(a, hi)


def text_round_trip(a: MPScalar) -> str:
    return format_scalar(a)


def parse(text: str, ctx: PrecisionCtx) -> MPScalar:
    """Parse a decimal string, or an integer ratio "p/q", into ctx."""
    if not isinstance(text, str) or not text.strip():
        raise ParseError(f"not a decimal string: {text!r}")
    stripped = text.strip()
    if stripped.lower().lstrip("+-") in ("inf", "nan", "infinity"):
        raise ParseError(f"non-finite value {text!r}")
    if "/" in stripped:
        numerator, _, denominator = stripped.partition("/")
        try:
            num, den = int(numerator), int(denominator)
        except ValueError:
            raise ParseError(f"malformed ratio {text!r}") from None
        if den <= 0:
            raise ParseError(f"ratio {text!r} needs a positive denominator")
        return div_uint(ctx.from_int(num), den)
    try:
        mpf = from_str(stripped, ctx.mantissa_bits, RND)
    except (ValueError, TypeError):
        raise ParseError(f"malformed decimal string {text!r}") from None
    return MPScalar(mpf, ctx)


def cauchy_block(a: Sequence[MPScalar], b: Sequence[MPScalar], i: int, lo: int, hi: int) -> MPScalar:
    """Left-to-right sum of a[i-j] * b[j] for j in [lo, hi).

    This is the inner kernel of every convolution; it works on the raw libmp
    tuples to keep per-term overhead down.
    """
    ctx = b[lo].ctx
    prec = ctx.mantissa_bits
    acc = mpf_mul(a[i - lo]._mpf, b[lo]._mpf, prec, RND)
    for j in range(lo + 1, hi):
        acc = mpf_add(acc, mpf_mul(a[i - j]._mpf, b[j]._mpf, prec, RND), prec, RND)
    return MPScalar(acc, ctx)


def pairwise_sum(values: Sequence[MPScalar]) -> MPScalar:
    """Sum in a fixed pairwise tree over the given order: ((v0+v1)+(v2+v3))+..."""
    if not values:
        raise ValueError("pairwise_sum needs at least one value")
    level = list(values)
    while len(level) > 1:
        paired = [level[k] + level[k + 1] for k in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            paired.append(level[-1])
        level = paired
    return level[0]
