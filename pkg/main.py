import argparse
import logging
import sys
from pathlib import Path

from config import (
    BENCH_STEPS,
    COMPARISON_GRID,
    DEFAULT_K_SWEEP,
    DEFAULT_N_SWEEP,
    DEFAULT_RESERVES,
    PUBLISHED_FIT_K,
    REQUIRED_DIGITS,
)
from cns.calibrator import (
    AgreementCriterion,
    TcFit,
    calibrate_k,
    calibrate_n,
    estimate_nk,
    paired_digits,
    paired_order,
)
from cns.commands import (
    bench,
    compare_work,
    final_state_lines,
    fit_consistency,
    integrate,
    parse_fit,
    read_sweep_csv,
    reference_agreement,
    verify_pair,
    work_summary,
    write_sweep_csv,
)
from cns.errors import CNSError, ConfigurationError
from cns.run_config import RunConfig
from cns.step_control import StepRule

logger = logging.getLogger(__name__)


def int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def run_flags() -> argparse.ArgumentParser:
    """Flags shared by every subcommand that builds a RunConfig."""
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--config", help="YAML file with run settings; flags override it")
    flags.add_argument("--order", type=int, help="Taylor order N")
    flags.add_argument("--digits", type=int, help="Precision K in decimal digits")
    flags.add_argument("--step", help="'variable' or 'fixed:<tau>'")
    flags.add_argument("--t-end", type=float, help="End of the time interval")
    flags.add_argument("--ic", help="Initial condition as x,y,z exact decimals")
    flags.add_argument("--out-every", dest="output_every", type=float, help="Output grid spacing")
    flags.add_argument("--output-digits", type=int, help="Significant digits written per CSV value")
    flags.add_argument("--workers", type=int, help="Worker threads (default: CPU count)")
    flags.add_argument("--group-size", type=int, help="Workers per reduction group")
    flags.add_argument("--block-size", type=int, help="Convolution block size (default: from the order)")
    flags.add_argument("--verbose", action="store_true", help="Log every step")
    return flags


def build_config(args, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    if args.config:
        cfg = RunConfig.from_yaml(args.config, cfg)
    overrides = {
        key: getattr(args, key, None)
        for key in (
            "order",
            "digits",
            "step",
            "t_end",
            "ic",
            "output_every",
            "output_digits",
            "workers",
            "group_size",
            "block_size",
            "checkpoint_every",
            "checkpoint_seconds",
        )
    }
    overrides["checkpoint_path"] = getattr(args, "checkpoint", None)
    return RunConfig.from_mapping(overrides, cfg)


def print_config(cfg: RunConfig) -> None:
    print(f"# Order N={cfg.order}, precision K={cfg.digits} digits, step {cfg.step.label}")
    print(f"# Interval [0, {cfg.t_end:g}], output every {cfg.output_every:g}, IC ({', '.join(cfg.ic)})")
    print(f"# Workers {cfg.layout.workers} in groups of {cfg.layout.group_size}, block size {cfg.block_size}")


def cmd_integrate(args) -> int:
    cfg = build_config(args)
    print_config(cfg)
    stream = None if args.out else sys.stdout
    result = integrate(cfg, out=args.out, resume=args.resume, stream=stream)
    counters = result.counters
    print(
        f"# {counters.steps} steps, {counters.multiplications} multiplications, "
        f"{counters.wall_time:.2f} s, average tau {counters.average_tau:.6f}"
    )
    if result.final is not None:
        for line in final_state_lines(result.final):
            print(f"# {line}")
    return 0


def cmd_verify(args) -> int:
    cfg_main = build_config(args)
    cfg_check = cfg_main.replace(
        order=args.check_order or paired_order(cfg_main.order),
        digits=args.check_digits or paired_digits(cfg_main.digits),
    )
    print_config(cfg_main)
    print(f"Check run: N={cfg_check.order}, K={cfg_check.digits}")
    report = verify_pair(cfg_main, cfg_check, args.required_digits)
    for t, m in report.rows:
        print(f"{t:>12g} {m:>6}")
    print(report.summary())
    passed = report.passed
    if args.reference:
        if report.final_state is None:
            raise ConfigurationError("the main run did not reach t_end")
        ok, m = reference_agreement(report.final_state)
        print(f"reference at t={cfg_main.t_end:g}: {m} digits ({'PASS' if ok else 'FAIL'})")
        passed = passed and ok
    return 0 if passed else 1


def _criterion(args) -> AgreementCriterion:
    return AgreementCriterion(args.required_digits, args.grid)


def cmd_calibrate_k(args) -> int:
    base = build_config(args)
    fit, measurements = calibrate_k(base, args.values, _criterion(args), order=args.shared_order)
    if args.out:
        write_sweep_csv(Path(args.out), base, "K", args.values, measurements)
    for k, m in zip(args.values, measurements):
        print(f"K={k:>5}  Tc={m.tc:g}")
    print(fit.summary("K"))
    slope, intercept = PUBLISHED_FIT_K
    print(f"long-run fit: Tc = {slope} * K {intercept:+}")
    return 0


def cmd_calibrate_n(args) -> int:
    base = build_config(args)
    crit = _criterion(args)
    modes = [base.step] if not args.both_modes else [StepRule.parse("variable"), StepRule.parse(args.fixed_step)]
    fits: list[TcFit] = []
    for rule in modes:
        fit, measurements = calibrate_n(base.replace(step=rule), args.values, crit, digits=args.shared_digits)
        fits.append(fit)
        if args.out:
            stem = Path(args.out)
            path = stem if len(modes) == 1 else stem.with_name(f"{stem.stem}_{rule.mode.value}{stem.suffix}")
            write_sweep_csv(path, base.replace(step=rule), "N", args.values, measurements)
        for n, m in zip(args.values, measurements):
            print(f"[{rule.label}] N={n:>5}  Tc={m.tc:g}")
        print(f"[{rule.label}] {fit.summary('N')}")
    if len(fits) == 2:
        print(f"per-step work ratio implied by the slopes: {fit_consistency(fits[0], fits[1]):.3f}")
    return 0


def _load_fit(inline: str | None, sweep: str | None, name: str) -> TcFit | None:
    if inline and sweep:
        raise ConfigurationError(f"give either --fit-{name} or --sweep-{name}, not both")
    if inline:
        return parse_fit(inline)
    if sweep:
        return read_sweep_csv(Path(sweep))
    return None


def cmd_estimate(args) -> int:
    fit_n = _load_fit(args.fit_n, args.sweep_n, "n")
    if fit_n is None:
        raise ConfigurationError("estimate needs a Tc-N fit (--fit-n or --sweep-n)")
    fit_k = _load_fit(args.fit_k, args.sweep_k, "k") or TcFit(*PUBLISHED_FIT_K, (), 0.0)
    print(f"Tc-N: {fit_n.summary('N')}")
    print(f"Tc-K: {fit_k.summary('K')}")
    for reserve in args.reserve:
        n, k = estimate_nk(args.target, fit_n, fit_k, reserve)
        print(f"T={args.target:g} with {reserve:.0%} reserve: N={n}, K={k}")
    return 0


def cmd_bench(args) -> int:
    cfg = build_config(args)
    print_config(cfg)
    report = bench(cfg, args.workers_list, args.steps)
    print(report.table())
    if args.fixed_order:
        fixed_cfg = cfg.replace(order=args.fixed_order, step=StepRule.parse(args.fixed_step))
        report_fixed = bench(fixed_cfg, args.workers_list, args.steps)
        print(report_fixed.table())
        cmp = compare_work(cfg, args.fixed_order, args.horizon, fixed_cfg.step.fixed_tau)
        print(work_summary(cmp, report, report_fixed))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Multiple-precision Taylor integration of the Lorenz system")
    flags = run_flags()
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("integrate", parents=[flags], help="Integrate one trajectory")
    p.add_argument("--out", help="Trajectory CSV (default: stdout)")
    p.add_argument("--checkpoint", help="Checkpoint file path")
    p.add_argument("--checkpoint-every", type=int, help="Steps between checkpoints")
    p.add_argument("--checkpoint-seconds", type=float, help="Wall-clock seconds between checkpoints")
    p.add_argument("--resume", help="Resume from this checkpoint")
    p.set_defaults(handler=cmd_integrate)

    p = sub.add_parser("verify", parents=[flags], help="Compare a run against a higher N/K run")
    p.add_argument("--check-order", type=int, help="Order of the check run")
    p.add_argument("--check-digits", type=int, help="Precision of the check run")
    p.add_argument("--required-digits", type=int, default=REQUIRED_DIGITS)
    p.add_argument("--reference", action="store_true", help="Also compare the final state with the t=11000 values")
    p.set_defaults(handler=cmd_verify)

    for name, handler, default, shared in (
        ("calibrate-k", cmd_calibrate_k, DEFAULT_K_SWEEP, "--shared-order"),
        ("calibrate-n", cmd_calibrate_n, DEFAULT_N_SWEEP, "--shared-digits"),
    ):
        p = sub.add_parser(name, parents=[flags], help=f"Tc sweep over {name[-1].upper()}")
        p.add_argument("--values", type=int_list, default=list(default))
        p.add_argument(shared, type=int, help="Companion setting held fixed across the sweep")
        p.add_argument("--required-digits", type=int, default=REQUIRED_DIGITS)
        p.add_argument("--grid", type=float, default=COMPARISON_GRID, help="Comparison grid spacing")
        p.add_argument("--out", help="Sweep CSV")
        p.set_defaults(handler=handler)
        if name == "calibrate-n":
            p.add_argument("--both-modes", action="store_true", help="Sweep variable and fixed steps")
            p.add_argument("--fixed-step", default="fixed:0.01")

    p = sub.add_parser("estimate", help="N and K for a target horizon")
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--fit-n", help="slope,intercept")
    p.add_argument("--sweep-n", help="calibrate-n CSV")
    p.add_argument("--fit-k", help="slope,intercept (default: the long-run fit)")
    p.add_argument("--sweep-k", help="calibrate-k CSV")
    p.add_argument("--reserve", type=float_list, default=list(DEFAULT_RESERVES))
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(handler=cmd_estimate)

    p = sub.add_parser("bench", parents=[flags], help="Timing, speedup and work comparison")
    p.add_argument("--workers-list", type=int_list, default=[1, 2, 4])
    p.add_argument("--steps", type=int, default=BENCH_STEPS)
    p.add_argument("--fixed-order", type=int, help="Order of the fixed-step run to compare work against")
    p.add_argument("--fixed-step", default="fixed:0.01")
    p.add_argument("--horizon", type=float, default=10.0)
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
    )
    try:
        return args.handler(args)
    except CNSError as e:
        logger.error(f"[CLI] {e}")
        return 2
    except KeyboardInterrupt:
        print("Interrupted by user. Shutting down...")
        return 130


if __name__ == "__main__":
    sys.exit(main())
