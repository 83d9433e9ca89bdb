"""Orchestration behind the CLI subcommands."""
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence, TextIO

from config import BENCH_STEPS, DEFAULT_FIXED_TAU, REFERENCE_STATE, REFERENCE_TIME, REQUIRED_DIGITS
from cns.calibrator import AgreementCriterion, TcFit, TcMeasurement, compare_runs, digits_agreement, fit_linear
from cns.checkpoint import Checkpoint
from cns.errors import ConfigurationError
from cns.integrator import RunResult, TrajectoryIntegrator
from cns.lorenz_taylor import LorenzParams, LorenzState, multiplications_per_step
from cns.mp_scalar import format_scalar
from cns.reduction_engine import ReductionEngine, WorkerLayout, gil_enabled
from cns.run_config import RunConfig
from cns.step_control import StepMode, next_stepsize

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["t", "x", "y", "z"]


def _data_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    comments, rows = [], []
    with open(path, newline="") as f:
        for line in f:
            if line.startswith("#"):
                comments.append(line.rstrip("\n"))
    with open(path, newline="") as f:
        reader = csv.reader(line for line in f if not line.startswith("#"))
        next(reader, None)
        rows = [row for row in reader if row]
    return comments, rows


def integrate(cfg: RunConfig, out: Path | None = None, resume: Path | None = None, stream: TextIO | None = None) -> RunResult:
    """Run one trajectory, writing t, x, y, z rows at every grid time.

    When resuming, rows already written past the checkpoint are dropped so the
    file ends up identical to an uninterrupted run.
    """
    integrator = TrajectoryIntegrator(cfg)
    checkpoint = None
    if resume is not None:
        checkpoint = Checkpoint.load(resume, integrator.ctx, integrator.digest)
        logger.info(f"[Integrator] Resuming at step {checkpoint.step_index}, t={float(checkpoint.state.t):.4f}")

    handle = None
    if out is not None:
        out = Path(out)
        if checkpoint is not None and out.exists():
            comments, rows = _data_rows(out)
            handle = open(out, "w", newline="")
            writer = csv.writer(handle)
            handle.write("\n".join(comments) + "\n")
            writer.writerow(TRAJECTORY_COLUMNS)
            writer.writerows(rows[: checkpoint.next_output])
        else:
            handle = open(out, "w", newline="")
            handle.write(cfg.header() + "\n")
            csv.writer(handle).writerow(TRAJECTORY_COLUMNS)
    elif stream is not None:
        stream.write(cfg.header() + "\n")
        csv.writer(stream).writerow(TRAJECTORY_COLUMNS)
    target = handle or stream
    writer = csv.writer(target) if target is not None else None

    def sink(record):
        if writer is not None:
            writer.writerow(record.row(cfg.output_digits))

    try:
        result = integrator.run(sink, resume=checkpoint)
    except KeyboardInterrupt:
        logger.info("[Integrator] Interrupted; keeping the last completed step")
        integrator.save_checkpoint()
        raise
    finally:
        if handle is not None:
            handle.close()
    return result


def final_state_lines(state: LorenzState) -> list[str]:
    digits = state.ctx.decimal_digits
    return [f"{name} = {format_scalar(v, digits)}" for name, v in zip("txyz", (state.t, *state.point))]


@dataclass
class VerificationReport:
    passed: bool
    rows: list[tuple[float, int]]
    first_failure: float | None
    min_digits: int
    required_digits: int
    final_state: LorenzState | None = None  # main run at t_end

    def summary(self) -> str:
        verdict = "PASS" if self.passed else f"FAIL at t={self.first_failure:g}"
        return f"{verdict}: min {self.min_digits} digits over {len(self.rows)} grid times (need {self.required_digits})"


def verify_pair(cfg_main: RunConfig, cfg_check: RunConfig, required_digits: int = REQUIRED_DIGITS) -> VerificationReport:
    """Compare a run against a check run with at least its order and precision."""
    if cfg_check.order < cfg_main.order or cfg_check.digits < cfg_main.digits:
        raise ConfigurationError("the check run needs order and digits at least those of the main run")
    if cfg_check.output_every != cfg_main.output_every:
        raise ConfigurationError("main and check runs must share the output grid")
    crit = AgreementCriterion(required_digits, cfg_main.output_every)
    measurement: TcMeasurement = compare_runs(cfg_main, cfg_check, crit, stop_on_failure=False)
    rows = measurement.agreement
    return VerificationReport(
        passed=not measurement.decoupled,
        rows=rows,
        first_failure=measurement.first_failure,
        min_digits=min(m for _, m in rows),
        required_digits=required_digits,
        final_state=measurement.final_state,
    )


def reference_agreement(state: LorenzState) -> tuple[bool, int]:
    """Digits shared with the published state at t = 11000."""
    ctx = state.ctx
    if state.t != ctx.parse(REFERENCE_TIME):
        raise ConfigurationError(f"reference values are given at t={REFERENCE_TIME}, run ends at {float(state.t)}")
    reference = tuple(ctx.parse(v) for v in REFERENCE_STATE)
    m = digits_agreement(state.point, reference)
    return m >= REQUIRED_DIGITS, m


def write_sweep_csv(path: Path, cfg: RunConfig, name: str, values: Sequence[int], measurements: Sequence[TcMeasurement]) -> None:
    with open(path, "w", newline="") as f:
        f.write(cfg.header() + "\n")
        writer = csv.writer(f)
        writer.writerow([name, "tc", "decoupled"])
        for value, m in zip(values, measurements):
            writer.writerow([value, repr(m.tc), int(m.decoupled)])


def read_sweep_csv(path: Path) -> TcFit:
    _, rows = _data_rows(Path(path))
    points = [(float(r[0]), float(r[1])) for r in rows if int(r[2])]
    return fit_linear(points)


def parse_fit(text: str) -> TcFit:
    """'slope,intercept' for a fit taken from elsewhere."""
    try:
        slope, intercept = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"expected 'slope,intercept', got {text!r}") from None
    return TcFit(slope, intercept, (), 0.0)


@dataclass
class BenchRow:
    workers: int
    seconds_per_step: float
    speedup: float
    efficiency: float


@dataclass
class WorkComparison:
    horizon: float
    variable_order: int
    fixed_order: int
    variable_steps: int
    fixed_steps: int
    variable_multiplications: int
    fixed_multiplications: int
    average_tau: float

    @property
    def work_ratio(self) -> float:
        return self.variable_multiplications / self.fixed_multiplications

    @property
    def per_step_ratio(self) -> float:
        return multiplications_per_step(self.variable_order) / multiplications_per_step(self.fixed_order)


@dataclass
class BenchReport:
    order: int
    digits: int
    steps: int
    rows: list[BenchRow] = field(default_factory=list)
    gil: bool = True

    def efficiency_at(self, workers: int) -> float | None:
        return next((r.efficiency for r in self.rows if r.workers == workers), None)

    def table(self) -> str:
        lines = [f"# bench N={self.order} K={self.digits} over {self.steps} steps (GIL {'on' if self.gil else 'off'})"]
        lines.append(f"{'workers':>8} {'s/step':>12} {'speedup':>9} {'efficiency':>11}")
        for r in self.rows:
            lines.append(f"{r.workers:>8} {r.seconds_per_step:>12.5f} {r.speedup:>9.3f} {r.efficiency:>10.1%}")
        return "\n".join(lines)


def time_steps(cfg: RunConfig, workers: int, steps: int) -> float:
    """Mean wall time of `steps` full steps (coefficients, stepsize, Horner) on `workers` workers."""
    layout = WorkerLayout(workers, None, cfg.block_size)
    ctx = cfg.ctx
    params = LorenzParams.from_strings(ctx, cfg.params)
    state = LorenzState.from_decimals(ctx, cfg.ic)
    with ReductionEngine(layout) as engine:
        started = time.perf_counter()
        for _ in range(steps):
            table = engine.fill_table(state, params, cfg.order)
            tau = ctx.from_float(next_stepsize(table, cfg.step))
            state = LorenzState(state.t + tau, *engine.horner(table, tau))
        elapsed = time.perf_counter() - started
    return elapsed / steps


def bench(cfg: RunConfig, worker_counts: Sequence[int], steps: int = BENCH_STEPS) -> BenchReport:
    """Wall time per step, speedup against one worker and parallel efficiency."""
    if steps < 1:
        raise ConfigurationError("bench needs at least one step")
    report = BenchReport(cfg.order, cfg.digits, steps, gil=gil_enabled())
    if report.gil and max(worker_counts) > 1:
        logger.warning("[Bench] The interpreter holds a GIL; worker threads will not run arithmetic concurrently")
    counts = sorted(set(worker_counts) | {1})  # W=1 is the speedup baseline
    baseline = None
    for workers in counts:
        per_step = time_steps(cfg, workers, steps)
        if baseline is None:
            baseline = per_step
        speedup = baseline / per_step
        report.rows.append(BenchRow(workers, per_step, speedup, speedup / workers))
        logger.info(f"[Bench] W={workers}: {per_step:.4f} s/step, speedup {speedup:.2f}")
    return report


def fixed_step_count(horizon: float, tau: float) -> int:
    return math.ceil(Fraction(repr(horizon)) / Fraction(tau))


def compare_work(cfg_variable: RunConfig, fixed_order: int, horizon: float, fixed_tau: float | None = None) -> WorkComparison:
    """Total multiplications of a variable-step run against a fixed-step run over one horizon.

    The variable-step count comes from integrating; the fixed-step count is
    ceil(horizon / tau) steps of the fixed order.
    """
    if cfg_variable.step.mode is not StepMode.VARIABLE:
        raise ConfigurationError("compare_work expects the variable-step configuration")
    fixed_tau = fixed_tau or DEFAULT_FIXED_TAU
    run = TrajectoryIntegrator(cfg_variable.without_checkpoints().replace(t_end=horizon, output_every=horizon)).run()
    fixed_steps = fixed_step_count(horizon, fixed_tau)
    return WorkComparison(
        horizon=horizon,
        variable_order=cfg_variable.order,
        fixed_order=fixed_order,
        variable_steps=run.counters.steps,
        fixed_steps=fixed_steps,
        variable_multiplications=run.counters.multiplications,
        fixed_multiplications=fixed_steps * multiplications_per_step(fixed_order),
        average_tau=run.counters.average_tau,
    )


def estimated_speedup(work_ratio: float, efficiency_variable: float, efficiency_fixed: float) -> float:
    """Wall-clock gain of the variable-step run at equal worker counts.

    Fewer multiplications, scaled by how well each order parallelizes.
    """
    if work_ratio <= 0 or efficiency_fixed <= 0:
        raise ConfigurationError("work ratio and fixed-order efficiency must be positive")
    return (1.0 / work_ratio) * (efficiency_variable / efficiency_fixed)


def work_summary(
    cmp: WorkComparison,
    report_variable: BenchReport | None = None,
    report_fixed: BenchReport | None = None,
) -> str:
    lines = [
        f"# work over [0, {cmp.horizon:g}]",
        f"variable: N={cmp.variable_order}, {cmp.variable_steps} steps (average tau {cmp.average_tau:.5f}), {cmp.variable_multiplications} multiplications",
        f"fixed:    N={cmp.fixed_order}, {cmp.fixed_steps} steps, {cmp.fixed_multiplications} multiplications",
        f"total work ratio variable/fixed: {cmp.work_ratio:.3f}",
        f"per-step work ratio variable/fixed: {cmp.per_step_ratio:.3f}",
    ]
    if report_variable is None or report_fixed is None:
        return "\n".join(lines)
    for row in report_variable.rows:
        eff_fixed = report_fixed.efficiency_at(row.workers)
        if eff_fixed is None or eff_fixed <= 0:
            continue
        gain = estimated_speedup(cmp.work_ratio, row.efficiency, eff_fixed)
        lines.append(
            f"W={row.workers}: efficiency {row.efficiency:.1%} (N={cmp.variable_order}) vs "
            f"{eff_fixed:.1%} (N={cmp.fixed_order}), estimated speedup {gain:.2f}x"
        )
    return "\n".join(lines)


def fit_consistency(fit_variable: TcFit, fit_fixed: TcFit) -> float:
    """Per-step work ratio implied by two Tc-N slopes: (slope_fixed / slope_variable)^2."""
    return (fit_fixed.slope / fit_variable.slope) ** 2
