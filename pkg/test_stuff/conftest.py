from fractions import Fraction

import pytest

from config import INITIAL_CONDITION
from cns.lorenz_taylor import CoeffTable, LorenzParams, LorenzState
from cns.mp_scalar import MPScalar, make_ctx


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the desk-scale acceptance runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="desk-scale run, use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def ctx():
    return make_ctx(50)


@pytest.fixture
def params(ctx):
    return LorenzParams.standard(ctx)


@pytest.fixture
def ic_state(ctx):
    return LorenzState.from_decimals(ctx, INITIAL_CONDITION)


def close(a: MPScalar, b: MPScalar, ulps: int = 4) -> bool:
    """|a - b| within `ulps` units of the larger magnitude at a's precision."""
    fa, fb = a.to_fraction(), b.to_fraction()
    scale = max(abs(fa), abs(fb))
    return abs(fa - fb) <= scale * ulps * Fraction(1, 2 ** (a.ctx.mantissa_bits - 1))


def random_state(rng, ctx, spread: float = 20.0) -> LorenzState:
    x, y, z = (ctx.parse(repr(float(v))) for v in rng.uniform(-spread, spread, size=3))
    return LorenzState(ctx.zero(), x, y, z)


def random_table(rng, ctx, order: int) -> CoeffTable:
    """Table of random coefficients (not a Lorenz solution) for reduction tests."""
    table = CoeffTable.allocate(random_state(rng, ctx), order)
    for i in range(1, order + 1):
        table.write(i, tuple(ctx.parse(repr(float(v))) for v in rng.normal(size=3)))
    return table
