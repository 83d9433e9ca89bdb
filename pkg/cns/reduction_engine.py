"""Parallel coefficient levels with a deterministic two-level reduction.

One coefficient level runs in two phases separated by a join (the barrier):

1. every worker multiplies and sums its contiguous run of convolution blocks
   into the shared per-block slots; workers with the lightest block share
   also take the convolution-free terms x_{i+1}, R x_i - y_i and b z_i;
2. the block partials are gathered per worker group (intra-group level) and
   combined across group leaders (the allreduce level), after which y_{i+1}
   and z_{i+1} are finalized by two workers at once.

The association of every sum is fixed by the block plan alone, so neither
the worker count nor the group size changes a single bit of the result.
"""
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from config import SLOT_PADDING
from cns.errors import ConfigurationError
from cns.lorenz_taylor import (
    CoeffTable,
    LorenzParams,
    LorenzState,
    auto_block_size,
    available_cores,
    block_bounds,
    finish_y,
    finish_z,
    horner_component,
    x_next_term,
    y_linear_term,
    z_linear_term,
)
from cns.mp_scalar import MPScalar, cauchy_block, pairwise_sum

logger = logging.getLogger(__name__)

# convolution-free tasks of a level, handed to the least loaded workers
PRECOMPUTE_TASKS = (
    ("x_next", x_next_term),
    ("y_linear", y_linear_term),
    ("z_linear", z_linear_term),
)


def gil_enabled() -> bool:
    check = getattr(sys, "_is_gil_enabled", None)
    return True if check is None else check()


@dataclass(frozen=True)
class WorkerLayout:
    workers: int = field(default_factory=available_cores)
    group_size: int | None = None  # None: a single group of all workers
    block_size: int | None = None  # None: auto from the order

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigurationError(f"worker count must be >= 1, got {self.workers}")
        if self.group_size is None:
            object.__setattr__(self, "group_size", self.workers)
        if self.group_size < 1:
            raise ConfigurationError(f"group size must be >= 1, got {self.group_size}")
        if self.block_size is not None and self.block_size < 1:
            raise ConfigurationError(f"block size must be >= 1, got {self.block_size}")

    def resolve_block_size(self, order: int | None = None) -> int:
        if self.block_size is not None:
            return self.block_size
        if order is None:
            raise ConfigurationError("auto block size needs the method order")
        return auto_block_size(order)

    @property
    def groups(self) -> list[range]:
        """Worker ids per group; the last group may be smaller."""
        return [range(g, min(g + self.group_size, self.workers)) for g in range(0, self.workers, self.group_size)]


@dataclass(frozen=True)
class Block:
    block_id: int
    lo: int
    hi: int

    @property
    def size(self) -> int:
        return self.hi - self.lo


def plan_blocks(i: int, layout: WorkerLayout, order: int | None = None) -> list[Block]:
    block_size = layout.resolve_block_size(order)
    return [Block(b, lo, hi) for b, (lo, hi) in enumerate(block_bounds(i, block_size))]


def assign_blocks(blocks: Sequence[Block], workers: int) -> list[list[Block]]:
    """Contiguous runs of blocks per worker; earlier workers take the remainder."""
    share, extra = divmod(len(blocks), workers)
    runs, start = [], 0
    for w in range(workers):
        count = share + (1 if w < extra else 0)
        runs.append(list(blocks[start : start + count]))
        start += count
    return runs


@dataclass
class PartialSumSlots:
    """Shared per-block accumulators and per-worker scratch, padded apart."""

    sum_xy: list
    sum_xz: list
    tempv: list
    padding: int = SLOT_PADDING

    @classmethod
    def allocate(cls, n_blocks: int, workers: int, padding: int = SLOT_PADDING) -> "PartialSumSlots":
        return cls([None] * (n_blocks * padding), [None] * (n_blocks * padding), [None] * (workers * padding), padding)

    def put(self, block_id: int, s_xy: MPScalar, s_xz: MPScalar) -> None:
        self.sum_xy[block_id * self.padding] = s_xy
        self.sum_xz[block_id * self.padding] = s_xz

    def take(self, block_id: int) -> tuple[MPScalar, MPScalar]:
        k = block_id * self.padding
        s_xy, s_xz = self.sum_xy[k], self.sum_xz[k]
        if s_xy is None or s_xz is None:
            raise RuntimeError(f"block {block_id} read before it was written")
        self.sum_xy[k] = self.sum_xz[k] = None
        return s_xy, s_xz

    def scratch(self, worker: int) -> dict:
        k = worker * self.padding
        if self.tempv[k] is None:
            self.tempv[k] = {}
        return self.tempv[k]


def group_allreduce(partials: Sequence[Sequence[MPScalar]], layout: WorkerLayout | None = None) -> list[MPScalar]:
    """Combine per-group ordered partials; every group leader gets the same sum.

    Group partials are taken in ascending group id and reduced with the fixed
    pairwise tree, so four single-value groups give ((p0+p1)+(p2+p3)).
    """
    if layout is not None and len(partials) != len(layout.groups):
        raise ConfigurationError(f"{len(partials)} group partials for {len(layout.groups)} groups")
    ordered = [p for group in partials for p in group]
    total = pairwise_sum(ordered)
    return [total] * len(partials)


class ReductionEngine:
    """Worker pool that fills coefficient tables and evaluates Horner in parallel."""

    def __init__(self, layout: WorkerLayout):
        self.layout = layout
        self._pool = None

    def start(self) -> "ReductionEngine":
        if self._pool is None and self.layout.workers > 1:
            self._pool = ThreadPoolExecutor(max_workers=self.layout.workers, thread_name_prefix="cns-worker")
            logger.info(
                f"[Engine] Started {self.layout.workers} workers in {len(self.layout.groups)} groups"
            )
        return self

    def stop(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _phase(self, tasks: Sequence[Callable[[], object]]) -> list:
        """Run tasks concurrently and join them all before returning."""
        if self._pool is None:
            return [task() for task in tasks]
        futures = [self._pool.submit(task) for task in tasks]
        return [f.result() for f in futures]

    def step_coefficients(
        self,
        table: CoeffTable,
        i: int,
        params: LorenzParams,
        block_size: int,
        slots: PartialSumSlots | None = None,
    ) -> tuple[MPScalar, MPScalar, MPScalar]:
        if i >= table.order or i > table.filled:
            raise IndexError(f"level {i + 1} cannot be built (order {table.order}, filled {table.filled})")
        layout = self.layout
        blocks = [Block(b, lo, hi) for b, (lo, hi) in enumerate(block_bounds(i, block_size))]
        runs = assign_blocks(blocks, layout.workers)
        if slots is None:
            slots = PartialSumSlots.allocate(len(blocks), layout.workers)

        # lightest workers sit at the end of the id range
        extras = [[] for _ in range(layout.workers)]
        for k, task in enumerate(PRECOMPUTE_TASKS):
            extras[(layout.workers - 1 - k) % layout.workers].append(task)

        def reduce_run(w: int):
            for blk in runs[w]:
                slots.put(
                    blk.block_id,
                    cauchy_block(table.x, table.y, i, blk.lo, blk.hi),
                    cauchy_block(table.x, table.z, i, blk.lo, blk.hi),
                )
            scratch = slots.scratch(w)
            for name, term in extras[w]:
                scratch[name] = term(table, i, params)

        self._phase([lambda w=w: reduce_run(w) for w in range(layout.workers)])

        terms = {}
        for w in range(layout.workers):
            terms.update(slots.scratch(w))
            slots.tempv[w * slots.padding] = None
        xy_partials, xz_partials = [], []
        for group in layout.groups:
            group_xy, group_xz = [], []
            for w in group:
                for blk in runs[w]:
                    s_xy, s_xz = slots.take(blk.block_id)
                    group_xy.append(s_xy)
                    group_xz.append(s_xz)
            xy_partials.append(group_xy)
            xz_partials.append(group_xz)

        def final_y():
            return finish_y(i, terms["y_linear"], group_allreduce(xz_partials, layout)[0])

        def final_z():
            return finish_z(i, terms["z_linear"], group_allreduce(xy_partials, layout)[-1])

        y_next, z_next = self._phase([final_y, final_z])
        return terms["x_next"], y_next, z_next

    def fill_table(self, state: LorenzState, params: LorenzParams, order: int) -> CoeffTable:
        table = CoeffTable.allocate(state, order)
        block_size = self.layout.resolve_block_size(order)
        n_blocks = len(block_bounds(order - 1, block_size))
        slots = PartialSumSlots.allocate(n_blocks, self.layout.workers)
        for i in range(order):
            table.write(i + 1, self.step_coefficients(table, i, params, block_size, slots))
        return table

    def conv_pair(self, table: CoeffTable, i: int, block_size: int | None = None) -> tuple[MPScalar, MPScalar]:
        if block_size is None:
            block_size = self.layout.resolve_block_size(table.order)
        blocks = plan_blocks(i, WorkerLayout(self.layout.workers, self.layout.group_size, block_size))
        runs = assign_blocks(blocks, self.layout.workers)

        def reduce_run(w: int):
            return [
                (cauchy_block(table.x, table.y, i, b.lo, b.hi), cauchy_block(table.x, table.z, i, b.lo, b.hi))
                for b in runs[w]
            ]

        per_worker = self._phase([lambda w=w: reduce_run(w) for w in range(self.layout.workers)])
        xy = [[p[0] for w in group for p in per_worker[w]] for group in self.layout.groups]
        xz = [[p[1] for w in group for p in per_worker[w]] for group in self.layout.groups]
        return group_allreduce(xy, self.layout)[0], group_allreduce(xz, self.layout)[0]

    def horner(self, table: CoeffTable, theta: MPScalar) -> tuple[MPScalar, MPScalar, MPScalar]:
        """The three component polynomials evaluated as concurrent tasks."""
        x, y, z = self._phase(
            [
                lambda: horner_component(table.x, theta),
                lambda: horner_component(table.y, theta),
                lambda: horner_component(table.z, theta),
            ]
        )
        return x, y, z


def conv_pair(table: CoeffTable, i: int, layout: WorkerLayout) -> tuple[MPScalar, MPScalar]:
    """Both level-i convolutions on a short-lived engine; bits match the sequential sums."""
    with ReductionEngine(layout) as engine:
        return engine.conv_pair(table, i)


def step_coefficients_parallel(
    table: CoeffTable,
    i: int,
    params: LorenzParams,
    layout: WorkerLayout,
    engine: ReductionEngine | None = None,
) -> tuple[MPScalar, MPScalar, MPScalar]:
    """Build level i+1 in parallel and write it into the table."""
    block_size = layout.resolve_block_size(table.order)
    if engine is not None:
        values = engine.step_coefficients(table, i, params, block_size)
    else:
        with ReductionEngine(layout) as owned:
            values = owned.step_coefficients(table, i, params, block_size)
    table.write(i + 1, values)
    return values
