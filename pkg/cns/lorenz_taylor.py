"""Sequential Taylor-series machinery for the Lorenz system.

dx/dt = sigma (y - x),  dy/dt = R x - y - x z,  dz/dt = x y - b z

Slot i of a :class:`CoeffTable` holds the normalized derivatives
(x_i, y_i, z_i), i.e. the i-th derivatives divided by i!. Level i+1 is built
from levels 0..i by the recurrence

    x_{i+1} = sigma (y_i - x_i) / (i+1)
    y_{i+1} = (R x_i - y_i - sum_j x_{i-j} z_j) / (i+1)
    z_{i+1} = (sum_j x_{i-j} y_j - b z_i) / (i+1)

The two convolution sums are accumulated block by block (left to right inside
a block) and the block partials are combined in a fixed pairwise tree. The
parallel engine uses the same association, so both produce identical bits.
"""
import os
from dataclasses import dataclass

from config import BLOCKS_PER_WORKER, LORENZ_PARAMS, MIN_BLOCK_SIZE
from cns.errors import ConfigurationError, ContextMismatchError
from cns.mp_scalar import MPScalar, PrecisionCtx, cauchy_block, div_uint, pairwise_sum, parse


@dataclass(frozen=True)
class LorenzParams:
    sigma: MPScalar
    R: MPScalar
    b: MPScalar

    def __post_init__(self):
        if not (self.sigma.ctx == self.R.ctx == self.b.ctx):
            raise ContextMismatchError("Lorenz parameters must share one precision context")

    @property
    def ctx(self) -> PrecisionCtx:
        return self.sigma.ctx

    @classmethod
    def standard(cls, ctx: PrecisionCtx) -> "LorenzParams":
        """sigma = 10, R = 28, b = 8/3 (rounded once, in ctx)."""
        return cls(ctx.from_int(10), ctx.from_int(28), div_uint(ctx.from_int(8), 3))

    @classmethod
    def from_strings(cls, ctx: PrecisionCtx, values=LORENZ_PARAMS) -> "LorenzParams":
        sigma, R, b = (parse(v, ctx) for v in values)
        return cls(sigma, R, b)


@dataclass(frozen=True)
class LorenzState:
    t: MPScalar
    x0: MPScalar
    y0: MPScalar
    z0: MPScalar

    def __post_init__(self):
        if not (self.t.ctx == self.x0.ctx == self.y0.ctx == self.z0.ctx):
            raise ContextMismatchError("state components must share one precision context")

    @property
    def ctx(self) -> PrecisionCtx:
        return self.t.ctx

    @property
    def point(self) -> tuple[MPScalar, MPScalar, MPScalar]:
        return self.x0, self.y0, self.z0

    @classmethod
    def from_decimals(cls, ctx: PrecisionCtx, ic, t: str = "0") -> "LorenzState":
        x, y, z = ic
        return cls(parse(t, ctx), parse(x, ctx), parse(y, ctx), parse(z, ctx))


@dataclass
class CoeffTable:
    """Three flat arrays x, y, z of length order+1; unfilled slots are None."""

    order: int
    x: list
    y: list
    z: list
    filled: int = 0  # highest level whose three slots are written

    @classmethod
    def allocate(cls, state: LorenzState, order: int) -> "CoeffTable":
        if order < 1:
            raise ConfigurationError(f"order must be >= 1, got {order}")
        size = order + 1
        table = cls(order, [None] * size, [None] * size, [None] * size)
        table.x[0], table.y[0], table.z[0] = state.point
        return table

    @property
    def ctx(self) -> PrecisionCtx:
        return self.x[0].ctx

    @property
    def complete(self) -> bool:
        return self.filled == self.order

    def write(self, i: int, values) -> None:
        if i != self.filled + 1:
            raise IndexError(f"level {i} written out of order (filled through {self.filled})")
        self.x[i], self.y[i], self.z[i] = values
        self.filled = i


def available_cores() -> int:
    return os.cpu_count() or 1


def auto_block_size(order: int, workers: int | None = None) -> int:
    """Largest block size that still gives every worker BLOCKS_PER_WORKER blocks at i = N/2.

    Sized for the machine's core count (the default worker count), not for the
    worker count of a particular layout, so every layout on one machine sums
    in the same blocks. Pin the block size to move checkpoints between
    machines.
    """
    if workers is None:
        workers = available_cores()
    return max(MIN_BLOCK_SIZE, (order // 2 + 1) // (BLOCKS_PER_WORKER * workers))


def block_bounds(i: int, block_size: int) -> list[tuple[int, int]]:
    """Contiguous half-open ranges of size <= block_size covering 0..i."""
    if i < 0:
        raise IndexError(f"convolution index must be >= 0, got {i}")
    if block_size < 1:
        raise ConfigurationError(f"block size must be >= 1, got {block_size}")
    length = i + 1
    return [(lo, min(lo + block_size, length)) for lo in range(0, length, block_size)]


def convolution_pair(table: CoeffTable, i: int, block_size: int) -> tuple[MPScalar, MPScalar]:
    """(sum_j x_{i-j} y_j, sum_j x_{i-j} z_j) in the canonical block order."""
    bounds = block_bounds(i, block_size)
    s_xy = pairwise_sum([cauchy_block(table.x, table.y, i, lo, hi) for lo, hi in bounds])
    s_xz = pairwise_sum([cauchy_block(table.x, table.z, i, lo, hi) for lo, hi in bounds])
    return s_xy, s_xz


def x_next_term(table: CoeffTable, i: int, params: LorenzParams) -> MPScalar:
    return div_uint(params.sigma * (table.y[i] - table.x[i]), i + 1)


def y_linear_term(table: CoeffTable, i: int, params: LorenzParams) -> MPScalar:
    return params.R * table.x[i] - table.y[i]


def z_linear_term(table: CoeffTable, i: int, params: LorenzParams) -> MPScalar:
    return params.b * table.z[i]


def level_terms(table: CoeffTable, i: int, params: LorenzParams) -> tuple[MPScalar, MPScalar, MPScalar]:
    """Terms of level i+1 that need no convolution: x_{i+1}, R x_i - y_i, b z_i."""
    return x_next_term(table, i, params), y_linear_term(table, i, params), z_linear_term(table, i, params)


def finish_y(i: int, rx_minus_y: MPScalar, s_xz: MPScalar) -> MPScalar:
    return div_uint(rx_minus_y - s_xz, i + 1)


def finish_z(i: int, bz: MPScalar, s_xy: MPScalar) -> MPScalar:
    return div_uint(s_xy - bz, i + 1)


def finish_level(i: int, rx_minus_y: MPScalar, bz: MPScalar, s_xy: MPScalar, s_xz: MPScalar):
    """(y_{i+1}, z_{i+1}) from the precomputed terms and the two sums."""
    return finish_y(i, rx_minus_y, s_xz), finish_z(i, bz, s_xy)


def next_coeff(table: CoeffTable, i: int, params: LorenzParams, block_size: int | None = None):
    if i >= table.order:
        raise IndexError(f"level {i + 1} exceeds order {table.order}")
    if i > table.filled:
        raise IndexError(f"levels 0..{i} must be filled, have 0..{table.filled}")
    if block_size is None:
        block_size = auto_block_size(table.order)
    x_next, rx_minus_y, bz = level_terms(table, i, params)
    s_xy, s_xz = convolution_pair(table, i, block_size)
    y_next, z_next = finish_level(i, rx_minus_y, bz, s_xy, s_xz)
    return x_next, y_next, z_next


def fill_table(state: LorenzState, params: LorenzParams, order: int, block_size: int | None = None) -> CoeffTable:
    table = CoeffTable.allocate(state, order)
    if block_size is None:
        block_size = auto_block_size(order)
    for i in range(order):
        table.write(i + 1, next_coeff(table, i, params, block_size))
    return table


def horner_component(coeffs, theta: MPScalar) -> MPScalar:
    acc = coeffs[-1]
    for c in reversed(coeffs[:-1]):
        acc = acc * theta + c
    return acc


def horner_eval(table: CoeffTable, theta: MPScalar) -> tuple[MPScalar, MPScalar, MPScalar]:
    """Sum_i X_i theta^i per component, valid for 0 <= theta <= accepted step."""
    return (
        horner_component(table.x, theta),
        horner_component(table.y, theta),
        horner_component(table.z, theta),
    )


def as_scalar(value, ctx: PrecisionCtx) -> MPScalar:
    if isinstance(value, MPScalar):
        return value
    return ctx.from_float(float(value))


def advance(state: LorenzState, params: LorenzParams, order: int, tau, block_size: int | None = None) -> LorenzState:
    """One Taylor step of size tau (a double or an MPScalar in the state's context)."""
    tau = as_scalar(tau, state.ctx)
    if not tau > state.ctx.zero():
        raise ConfigurationError("stepsize must be positive")
    table = fill_table(state, params, order, block_size)
    t_new = state.t + tau
    # realized step; the difference is exact whenever tau <= t
    tau = t_new - state.t
    return LorenzState(t_new, *horner_eval(table, tau))


def multiplications_per_step(order: int) -> int:
    """Multiplication inventory of one step.

    Level i costs 2(i+1) convolution products plus sigma(.), R x_i and b z_i;
    Horner costs order products per component. Total N(N+1) + 6N.
    """
    return order * (order + 1) + 6 * order
