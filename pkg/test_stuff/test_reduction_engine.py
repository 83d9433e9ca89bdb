import threading

import numpy as np
import pytest

from config import INITIAL_CONDITION
from conftest import random_state, random_table
from cns.errors import ConfigurationError
from cns.lorenz_taylor import (
    CoeffTable,
    LorenzParams,
    LorenzState,
    convolution_pair,
    fill_table,
    horner_eval,
    next_coeff,
)
from cns.mp_scalar import format_scalar, make_ctx
from cns.reduction_engine import (
    Block,
    PartialSumSlots,
    ReductionEngine,
    WorkerLayout,
    assign_blocks,
    conv_pair,
    group_allreduce,
    plan_blocks,
    step_coefficients_parallel,
)


def test_plan_blocks_examples():
    layout = WorkerLayout(workers=3, block_size=2)
    assert plan_blocks(5, layout) == [Block(0, 0, 2), Block(1, 2, 4), Block(2, 4, 6)]
    assert plan_blocks(0, layout) == [Block(0, 0, 1)]
    blocks = plan_blocks(10**4, WorkerLayout(workers=8, block_size=64))
    assert len(blocks) == 157
    assert blocks[-1].size == 17


def test_plan_blocks_ignore_worker_count():
    plans = [plan_blocks(99, WorkerLayout(workers=w, group_size=g, block_size=8)) for w, g in ((1, 1), (3, 2), (8, 4))]
    assert plans[0] == plans[1] == plans[2]


def test_assign_blocks_is_contiguous():
    blocks = plan_blocks(20, WorkerLayout(workers=4, block_size=3))
    runs = assign_blocks(blocks, 4)
    assert [len(r) for r in runs] == [2, 2, 2, 1]
    assert [b for run in runs for b in run] == blocks
    assert assign_blocks(blocks[:2], 4)[2:] == [[], []]


def test_layout_validation():
    with pytest.raises(ConfigurationError):
        WorkerLayout(workers=0)
    with pytest.raises(ConfigurationError):
        WorkerLayout(workers=2, group_size=0)
    with pytest.raises(ConfigurationError):
        WorkerLayout(workers=2, block_size=0)
    assert WorkerLayout(workers=4).group_size == 4
    assert [list(g) for g in WorkerLayout(workers=5, group_size=2).groups] == [[0, 1], [2, 3], [4]]


def test_group_allreduce(ctx):
    p = [ctx.parse(v) for v in ("1e40", "3", "-1e40", "5")]
    assert group_allreduce([[p[0]]]) == [p[0]]
    totals = group_allreduce([[v] for v in p], WorkerLayout(workers=4, group_size=1))
    assert totals == [(p[0] + p[1]) + (p[2] + p[3])] * 4
    with pytest.raises(ConfigurationError):
        group_allreduce([[p[0]], [p[1]]], WorkerLayout(workers=4, group_size=1))


def test_group_allreduce_matches_flat_reduction(ctx):
    table = random_table(np.random.default_rng(1), ctx, 64)
    flat = convolution_pair(table, 50, 4)
    for workers, group_size in ((8, 1), (8, 8), (6, 4)):
        assert conv_pair(table, 50, WorkerLayout(workers, group_size, 4)) == flat


def test_conv_pair_first_level(ctx):
    table = CoeffTable.allocate(LorenzState.from_decimals(ctx, INITIAL_CONDITION), 4)
    s_xy, s_xz = conv_pair(table, 0, WorkerLayout(workers=2))
    assert s_xy == table.x[0] * table.y[0]
    assert format_scalar(s_xy, 6).startswith("2.76184")
    assert format_scalar(s_xz, 6).startswith("-5.63112")


def test_conv_pair_worker_independence(ctx):
    table = random_table(np.random.default_rng(2), ctx, 80)
    results = {w: conv_pair(table, 77, WorkerLayout(workers=w, block_size=5)) for w in (1, 2, 3, 8)}
    assert len(set(results.values())) == 1
    # sequential oracle: left to right inside blocks, pairwise over blocks
    assert results[1] == convolution_pair(table, 77, 5)


def test_step_coefficients_parallel_first_level(ctx):
    params = LorenzParams.standard(ctx)
    state = LorenzState.from_decimals(ctx, INITIAL_CONDITION)
    sequential = next_coeff(CoeffTable.allocate(state, 3), 0, params)
    table = CoeffTable.allocate(state, 3)
    parallel = step_coefficients_parallel(table, 0, params, WorkerLayout(workers=4))
    assert parallel == sequential
    assert (table.x[1], table.y[1], table.z[1]) == sequential
    assert table.filled == 1


def test_step_coefficients_parallel_needs_filled_prefix(ic_state, params):
    table = CoeffTable.allocate(ic_state, 5)
    with pytest.raises(IndexError):
        step_coefficients_parallel(table, 2, params, WorkerLayout(workers=2))


@pytest.mark.parametrize("workers", [1, 2, 3, 4, 8])
def test_parallel_fill_equals_sequential(workers, params):
    rng = np.random.default_rng(workers)
    ctx = params.ctx
    for order in (16, 64):
        state = random_state(rng, ctx)
        expected = fill_table(state, params, order)
        with ReductionEngine(WorkerLayout(workers=workers, group_size=2)) as engine:
            got = engine.fill_table(state, params, order)
        assert got.x == expected.x and got.y == expected.y and got.z == expected.z


def test_equilibrium_any_worker_count(ctx, params):
    zero = ctx.zero()
    state = LorenzState(zero, zero, zero, zero)
    for workers in (1, 3, 8):
        with ReductionEngine(WorkerLayout(workers=workers)) as engine:
            table = engine.fill_table(state, params, 20)
        assert all(v.is_zero() for v in table.x + table.y + table.z)


def test_parallel_horner_matches_sequential(ctx, ic_state, params):
    table = fill_table(ic_state, params, 30)
    theta = ctx.parse("0.0731")
    with ReductionEngine(WorkerLayout(workers=3)) as engine:
        assert engine.horner(table, theta) == horner_eval(table, theta)


def test_partial_sum_slots(ctx):
    slots = PartialSumSlots.allocate(n_blocks=3, workers=2)
    one, two = ctx.from_int(1), ctx.from_int(2)
    slots.put(1, one, two)
    assert slots.take(1) == (one, two)
    with pytest.raises(RuntimeError):
        slots.take(1)  # consumed
    with pytest.raises(RuntimeError):
        slots.take(0)  # never written
    assert slots.scratch(0) is slots.scratch(0)
    assert slots.scratch(0) is not slots.scratch(1)


def test_engine_lifecycle():
    engine = ReductionEngine(WorkerLayout(workers=3))
    assert engine.start() is engine
    assert engine.start() is engine
    engine.stop()
    engine.stop()
    single = ReductionEngine(WorkerLayout(workers=1)).start()
    assert single._pool is None


def test_engine_runs_phases_on_workers():
    seen = set()
    with ReductionEngine(WorkerLayout(workers=4)) as engine:
        engine._phase([lambda: seen.add(threading.current_thread().name) for _ in range(8)])
    assert seen and all(name.startswith("cns-worker") for name in seen)


@pytest.mark.slow
@pytest.mark.parametrize("order", [16, 64, 256])
@pytest.mark.parametrize("digits", [64, 256])
def test_bit_identity_grid(order, digits):
    ctx = make_ctx(digits)
    params = LorenzParams.standard(ctx)
    rng = np.random.default_rng(order * digits)
    engines = {w: ReductionEngine(WorkerLayout(workers=w)).start() for w in (1, 2, 4, 8)}
    try:
        for _ in range(100):
            state = random_state(rng, ctx)
            expected = fill_table(state, params, order)
            for engine in engines.values():
                got = engine.fill_table(state, params, order)
                assert got.x == expected.x and got.y == expected.y and got.z == expected.z
    finally:
        for engine in engines.values():
            engine.stop()
