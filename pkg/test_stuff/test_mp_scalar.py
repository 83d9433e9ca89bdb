import math
from fractions import Fraction

import numpy as np
import pytest
from mpmath.libmp import mpf_pos, round_nearest

from config import GUARD_DIGITS
from conftest import close
from cns.errors import ConfigurationError, ContextMismatchError, MPOverflowError, ParseError
from cns.mp_scalar import (
    ArithOp,
    MPScalar,
    arith,
    cauchy_block,
    decompose,
    div_uint,
    format_scalar,
    make_ctx,
    pairwise_sum,
    parse,
    text_round_trip,
)


@pytest.mark.parametrize("digits, bits", [(16, 54), (100, 333), (4566, 15168)])
def test_mantissa_bits(digits, bits):
    ctx = make_ctx(digits)
    assert ctx.decimal_digits == digits
    assert ctx.mantissa_bits == bits


@pytest.mark.parametrize("digits", [15, 0, -3])
def test_rejects_low_precision(digits):
    with pytest.raises(ConfigurationError):
        make_ctx(digits)


def test_arith_identities(ctx):
    one, zero = ctx.from_int(1), ctx.zero()
    x = ctx.parse("-15.8")
    assert arith(one, zero, ArithOp.ADD) == one
    assert arith(x, zero, ArithOp.MUL).is_zero()
    assert arith(x, x, ArithOp.SUB).is_zero()


def test_arith_product(ctx):
    product = arith(ctx.parse("-15.8"), ctx.parse("35.64"), ArithOp.MUL)
    assert close(product, ctx.parse("-563.112"))
    assert Fraction(format_scalar(product, 20)) == Fraction("-563.112")


def test_context_mismatch():
    a, b = make_ctx(20).from_int(1), make_ctx(30).from_int(1)
    with pytest.raises(ContextMismatchError):
        a + b
    with pytest.raises(ContextMismatchError):
        a < b
    # equality is bit-exact and includes the context
    assert a != b


def test_div_uint(ctx):
    x = ctx.parse("-16.8")
    assert div_uint(x, 1) is x
    assert div_uint(ctx.from_int(3), 2) == ctx.from_float(1.5)
    # halving is exact in binary, so it commutes with rounding
    assert div_uint(x, 2) == ctx.parse("-8.4")
    with pytest.raises(ZeroDivisionError):
        div_uint(x, 0)


def test_decompose_examples(ctx):
    assert decompose(ctx.from_int(1)) == (0.5, 1)
    assert decompose(ctx.zero()) == (0.0, 0)
    assert decompose(ctx.from_int(2**10000)) == (0.5, 10001)
    assert decompose(ctx.from_int(-3)) == (-0.75, 2)
    assert decompose(abs(ctx.from_int(-3))) == (0.75, 2)
    m, e = decompose(ctx.parse("-0.1"))
    assert -1.0 < m <= -0.5 and decompose(ctx.parse("0.1")) == (-m, e)


def test_decompose_consistency(ctx):
    rng = np.random.default_rng(7)
    signs = rng.choice([-1.0, 1.0], size=50)
    for mantissa, exponent in zip(signs * rng.uniform(0.1, 1.0, size=50), rng.integers(-300, 300, size=50)):
        value = ctx.parse(f"{mantissa:.17f}e{exponent}")
        m, e = decompose(value)
        assert 0.5 <= abs(m) < 1.0
        rebuilt = Fraction(m) * Fraction(2) ** e
        exact = value.to_fraction()
        assert abs(rebuilt - exact) <= abs(exact) * Fraction(1, 2**50)


def test_text_round_trip_examples(ctx):
    x = ctx.parse("-15.8")
    text = text_round_trip(x)
    assert text == "-1.58e+1"
    assert parse(text, ctx) == x
    assert text_round_trip(ctx.zero()) == "0.0e+0"
    third = div_uint(ctx.from_int(1), 3)
    digits = len(text_round_trip(third).split("e")[0].replace(".", ""))
    assert ctx.decimal_digits - 1 <= digits <= ctx.decimal_digits + GUARD_DIGITS
    assert parse(text_round_trip(third), ctx) == third
    assert Fraction(format_scalar(make_ctx(16).parse("-17.48"), 16)) == Fraction("-17.48")


@pytest.mark.parametrize("digits", [16, 40, 250])
def test_text_round_trip_random(digits):
    ctx = make_ctx(digits)
    rng = np.random.default_rng(digits)
    for _ in range(40):
        significand = "".join(str(d) for d in rng.integers(0, 10, size=digits))
        sign = "-" if rng.random() < 0.5 else ""
        value = ctx.parse(f"{sign}0.{significand}e{int(rng.integers(-50, 50))}")
        assert parse(text_round_trip(value), ctx) == value
    tiny = ctx.parse("1e-100000")
    assert parse(text_round_trip(tiny), ctx) == tiny


@pytest.mark.parametrize("text", ["", "abc", "1.2.3", "inf", "-nan", "1/0", "x/3"])
def test_parse_errors(ctx, text):
    with pytest.raises(ParseError):
        parse(text, ctx)


def test_parse_ratio(ctx):
    assert ctx.parse("8/3") == div_uint(ctx.from_int(8), 3)


def test_precision_monotonicity():
    low, high = make_ctx(40), make_ctx(80)
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = (low.parse(repr(float(v))) for v in rng.normal(scale=100.0, size=2))
        for op in ArithOp:
            at_low = arith(a, b, op)
            wide = arith(MPScalar(a.mpf, high), MPScalar(b.mpf, high), op)
            rounded = MPScalar(mpf_pos(wide.mpf, low.mantissa_bits, round_nearest), low)
            if at_low.is_zero():
                assert rounded.is_zero()
                continue
            _, e = decompose(at_low)
            ulp = Fraction(2) ** (e - low.mantissa_bits)
            assert abs(at_low.to_fraction() - rounded.to_fraction()) <= ulp


def test_immutable(ctx):
    x = ctx.from_int(1)
    with pytest.raises(AttributeError):
        x.ctx = make_ctx(20)


def test_non_finite_and_overflow(ctx):
    with pytest.raises(MPOverflowError):
        ctx.from_float(math.inf)
    with pytest.raises(MPOverflowError):
        MPScalar((0, 1, 1 << 41, 1), ctx)


def test_pairwise_sum_tree(ctx):
    values = [ctx.parse(v) for v in ("1e30", "1", "-1e30", "1", "0.5")]
    a, b, c, d, e = values
    assert pairwise_sum(values[:4]) == (a + b) + (c + d)
    assert pairwise_sum(values) == ((a + b) + (c + d)) + e
    with pytest.raises(ValueError):
        pairwise_sum([])


def test_cauchy_block(ctx):
    a = [ctx.from_int(v) for v in (1, 2, 3, 4)]
    b = [ctx.from_int(v) for v in (5, 6, 7, 8)]
    # j in [1, 3) for i = 3: a[2] b[1] + a[1] b[2]
    assert cauchy_block(a, b, 3, 1, 3) == ctx.from_int(3 * 6 + 2 * 7)
    assert cauchy_block(a, b, 3, 0, 4) == ctx.from_int(4 * 5 + 3 * 6 + 2 * 7 + 1 * 8)
