"""Trajectory runs: stepping, dense output on a grid, counters and checkpoints."""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator

from config import LOG_EVERY_STEPS
from cns.checkpoint import Checkpoint
from cns.errors import CheckpointError, DegenerateSeriesError
from cns.lorenz_taylor import LorenzParams, LorenzState, multiplications_per_step
from cns.mp_scalar import MPScalar, format_scalar
from cns.reduction_engine import ReductionEngine
from cns.run_config import RunConfig
from cns.step_control import next_stepsize

logger = logging.getLogger(__name__)


@dataclass
class RunCounters:
    steps: int = 0
    multiplications: int = 0  # coefficient and step Horner products; dense output not counted
    tau_sum: float = 0.0
    wall_time: float = 0.0

    @property
    def average_tau(self) -> float:
        return self.tau_sum / self.steps if self.steps else 0.0


@dataclass(frozen=True)
class TrajectoryRecord:
    index: int
    t: MPScalar
    x: MPScalar
    y: MPScalar
    z: MPScalar

    @property
    def point(self) -> tuple[MPScalar, MPScalar, MPScalar]:
        return self.x, self.y, self.z

    def row(self, digits: int) -> list[str]:
        return [format_scalar(v, digits) for v in (self.t, self.x, self.y, self.z)]


@dataclass
class RunResult:
    final: LorenzState | None  # state at t_end; None when the run stopped early
    counters: RunCounters
    records: int = 0
    completed: bool = True
    last_checkpoint: Checkpoint | None = field(default=None, repr=False)


class TrajectoryIntegrator:
    """Integrates one configuration; the worker pool is owned by the run."""

    def __init__(self, cfg: RunConfig, engine: ReductionEngine | None = None):
        self.cfg = cfg
        self.ctx = cfg.ctx
        self.params = LorenzParams.from_strings(self.ctx, cfg.params)
        self._engine = engine
        self._owns_engine = engine is None
        self.running = False
        self.digest = cfg.digest()
        self.delta = self.ctx.parse(repr(cfg.output_every))
        self.t_end = self.ctx.parse(repr(cfg.t_end))
        self.per_step = multiplications_per_step(cfg.order)
        self._reset(None)

    def _reset(self, resume: Checkpoint | None) -> None:
        if resume is None:
            self.state = LorenzState.from_decimals(self.ctx, self.cfg.ic)
            self.next_output = 0
            self.counters = RunCounters()
        else:
            if resume.digest != self.digest:
                raise CheckpointError("checkpoint was written by a different configuration")
            self.state = resume.state
            self.next_output = resume.next_output
            self.counters = RunCounters(resume.step_index, resume.multiplications, resume.tau_sum, resume.wall_time)
        self.final = None
        self.last_checkpoint = None

    def grid_time(self, k: int) -> MPScalar:
        return self.delta * self.ctx.from_int(k)

    def checkpoint(self) -> Checkpoint:
        """Snapshot at the last completed step boundary."""
        return Checkpoint(
            digest=self.digest,
            step_index=self.counters.steps,
            next_output=self.next_output,
            state=self.state,
            multiplications=self.counters.multiplications,
            tau_sum=self.counters.tau_sum,
            wall_time=self.counters.wall_time,
        )

    def save_checkpoint(self) -> Checkpoint | None:
        if not self.cfg.checkpoint_path:
            return None
        snapshot = self.checkpoint()
        snapshot.save(self.cfg.checkpoint_path)
        self.last_checkpoint = snapshot
        return snapshot

    def _engine_start(self) -> ReductionEngine:
        if self._engine is None:
            self._engine = ReductionEngine(self.cfg.layout)
        return self._engine.start()

    def iter_outputs(self, resume: Checkpoint | None = None, max_steps: int | None = None) -> Iterator[TrajectoryRecord]:
        """Yield (t, x, y, z) at each grid time <= t_end, stepping as needed.

        With max_steps the run stops after that many steps of this call and
        writes a checkpoint (when a path is configured), which a later call
        can resume from.
        """
        self._reset(resume)
        engine = self._engine_start()
        self.running = True
        cfg = self.cfg
        zero = self.ctx.zero()
        taken = 0
        last_save = time.monotonic()
        try:
            if self.next_output == 0:
                yield TrajectoryRecord(0, self.state.t, *self.state.point)
                self.next_output = 1
            if self.t_end <= self.state.t:
                self.final = self.state
                return
            while self.running and self.state.t < self.t_end:
                if max_steps is not None and taken >= max_steps:
                    logger.info(f"[Integrator] Stopping after {taken} steps at step {self.counters.steps}")
                    self.save_checkpoint()
                    return
                started = time.perf_counter()
                state = self.state
                table = engine.fill_table(state, self.params, cfg.order)
                try:
                    tau = next_stepsize(table, cfg.step)
                    tau_mp = self.ctx.from_float(tau)
                except DegenerateSeriesError:
                    # fixed point: jump straight to the next time anybody asks for
                    target = min(self.grid_time(self.next_output), self.t_end)
                    tau_mp = target - state.t
                    tau = float(tau_mp)
                    logger.debug(f"[Integrator] Degenerate series at t={float(state.t):.6g}, stepping to {float(target):.6g}")
                if not tau_mp > zero:
                    raise DegenerateSeriesError(f"non-positive stepsize {tau!r}")
                t_new = state.t + tau_mp
                tau_mp = t_new - state.t  # exact when tau <= t, so t_new == t + tau_mp

                k = self.next_output
                while True:
                    t_k = self.grid_time(k)
                    if t_k > t_new or t_k > self.t_end:
                        break
                    # an interrupt here leaves the step uncommitted; resuming redoes it
                    yield TrajectoryRecord(k, t_k, *engine.horner(table, t_k - state.t))
                    k += 1
                if self.t_end <= t_new:
                    self.final = LorenzState(self.t_end, *engine.horner(table, self.t_end - state.t))
                new_state = LorenzState(t_new, *engine.horner(table, tau_mp))

                self.state, self.next_output = new_state, k
                counters = self.counters
                counters.steps += 1
                counters.multiplications += self.per_step
                counters.tau_sum += tau
                counters.wall_time += time.perf_counter() - started
                taken += 1
                logger.debug(f"[Integrator] step {counters.steps}: tau={tau:.6e}")
                if counters.steps % LOG_EVERY_STEPS == 0:
                    logger.info(
                        f"[Integrator] step {counters.steps}, t={float(t_new):.4f}, average tau {counters.average_tau:.5f}"
                    )
                due_steps = cfg.checkpoint_every and counters.steps % cfg.checkpoint_every == 0
                due_clock = cfg.checkpoint_seconds and time.monotonic() - last_save >= cfg.checkpoint_seconds
                if due_steps or due_clock:
                    self.save_checkpoint()
                    last_save = time.monotonic()
        finally:
            self.running = False
            if self._owns_engine:
                self._engine.stop()

    def run(
        self,
        sink: Callable[[TrajectoryRecord], None] | None = None,
        resume: Checkpoint | None = None,
        max_steps: int | None = None,
    ) -> RunResult:
        records = 0
        for record in self.iter_outputs(resume, max_steps):
            if sink is not None:
                sink(record)
            records += 1
        completed = self.final is not None
        if completed:
            logger.info(
                f"[Integrator] Reached t={self.cfg.t_end} in {self.counters.steps} steps, "
                f"{self.counters.multiplications} multiplications, average tau {self.counters.average_tau:.5f}"
            )
        return RunResult(self.final, self.counters, records, completed, self.last_checkpoint)

    def stop(self) -> None:
        """Stop after the step in progress."""
        self.running = False
