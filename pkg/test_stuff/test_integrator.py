import pytest

from config import INITIAL_CONDITION
from cns.checkpoint import Checkpoint
from cns.errors import CheckpointError, ConfigurationError
from cns.integrator import TrajectoryIntegrator
from cns.lorenz_taylor import LorenzState, multiplications_per_step
from cns.reduction_engine import WorkerLayout
from cns.run_config import RunConfig
from cns.step_control import StepRule
from cns.commands import fixed_step_count


def small_config(**changes) -> RunConfig:
    cfg = RunConfig(order=14, digits=30, t_end=3.0, output_every=0.5, layout=WorkerLayout(workers=1))
    return cfg.replace(**changes)


def collect(integrator, **kwargs):
    return [(r.index, r.t, r.point) for r in integrator.iter_outputs(**kwargs)]


def test_zero_horizon_emits_initial_condition_only():
    cfg = small_config(t_end=0.0)
    integrator = TrajectoryIntegrator(cfg)
    result = integrator.run()
    assert result.records == 1
    assert result.counters.steps == 0
    assert result.final == LorenzState.from_decimals(cfg.ctx, INITIAL_CONDITION)


def test_grid_records():
    cfg = small_config()
    records = list(TrajectoryIntegrator(cfg).iter_outputs())
    ctx = cfg.ctx
    assert [r.index for r in records] == list(range(7))
    assert [r.t for r in records] == [ctx.parse("0.5") * ctx.from_int(k) for k in range(7)]
    assert records[0].point == LorenzState.from_decimals(ctx, INITIAL_CONDITION).point


def test_final_state_matches_last_grid_record():
    cfg = small_config()
    integrator = TrajectoryIntegrator(cfg)
    result = integrator.run(sink=lambda r: None)
    last = list(TrajectoryIntegrator(cfg).iter_outputs())[-1]
    assert result.completed
    assert result.final.t == last.t
    assert result.final.point == last.point
    assert result.counters.multiplications == result.counters.steps * multiplications_per_step(cfg.order)
    assert result.counters.average_tau > 0


def test_outputs_do_not_depend_on_grid_or_workers():
    coarse = collect(TrajectoryIntegrator(small_config(output_every=1.0)))
    fine = collect(TrajectoryIntegrator(small_config(output_every=0.5)))
    parallel = collect(TrajectoryIntegrator(small_config(output_every=1.0, layout=WorkerLayout(workers=3, group_size=2))))
    assert [p for _, t, p in fine[::2]] == [p for _, t, p in coarse]
    assert parallel == coarse


def test_checkpoint_resume_is_bit_exact(tmp_path):
    path = tmp_path / "run.ckpt"
    cfg = small_config(checkpoint_every=5, checkpoint_path=str(path))
    full = TrajectoryIntegrator(cfg)
    expected = collect(full)

    first = TrajectoryIntegrator(cfg)
    head = collect(first, max_steps=13)
    assert first.final is None
    checkpoint = Checkpoint.load(path, cfg.ctx, cfg.digest())
    assert checkpoint.step_index == 13
    assert checkpoint.next_output == len(head)

    second = TrajectoryIntegrator(cfg)
    tail = collect(second, resume=checkpoint)
    assert head + tail == expected
    assert second.final == full.final
    assert second.counters.steps == full.counters.steps
    assert second.counters.multiplications == full.counters.multiplications
    assert second.counters.tau_sum == full.counters.tau_sum


def test_checkpoint_interval_does_not_change_outputs(tmp_path):
    plain = collect(TrajectoryIntegrator(small_config()))
    checkpointed = collect(TrajectoryIntegrator(small_config(checkpoint_every=3, checkpoint_path=str(tmp_path / "c"))))
    assert plain == checkpointed


def test_wall_clock_checkpoints(tmp_path):
    path = tmp_path / "clock.ckpt"
    cfg = small_config(t_end=1.0, checkpoint_seconds=1e-9, checkpoint_path=str(path))
    result = TrajectoryIntegrator(cfg).run()
    assert Checkpoint.load(path, cfg.ctx, cfg.digest()).step_index == result.counters.steps
    assert cfg.digest() == small_config().digest()


def test_checkpoint_text_round_trip():
    cfg = small_config()
    integrator = TrajectoryIntegrator(cfg)
    list(integrator.iter_outputs(max_steps=4))
    snapshot = integrator.checkpoint()
    text = snapshot.to_text()
    assert text.startswith(f"digest {cfg.digest()}\n")
    assert Checkpoint.from_text(text, cfg.ctx) == snapshot


def test_checkpoint_errors(tmp_path):
    cfg = small_config()
    snapshot = TrajectoryIntegrator(cfg).checkpoint()
    text = snapshot.to_text()
    with pytest.raises(CheckpointError):
        Checkpoint.from_text("\n".join(reversed(text.splitlines())), cfg.ctx)
    with pytest.raises(CheckpointError):
        Checkpoint.from_text(text.replace("step 0", "step zero"), cfg.ctx)
    with pytest.raises(CheckpointError):
        Checkpoint.from_text(text.split("\nx ")[0], cfg.ctx)
    path = tmp_path / "other.ckpt"
    snapshot.save(path)
    with pytest.raises(CheckpointError):
        Checkpoint.load(path, cfg.ctx, small_config(order=15).digest())
    with pytest.raises(CheckpointError):
        Checkpoint.load(tmp_path / "missing", cfg.ctx)
    with pytest.raises(CheckpointError):
        TrajectoryIntegrator(small_config(order=15)).run(resume=snapshot)


def test_equilibrium_steps_to_grid_times():
    cfg = small_config(ic=("0", "0", "0"), t_end=2.0, output_every=1.0)
    integrator = TrajectoryIntegrator(cfg)
    records = list(integrator.iter_outputs())
    assert len(records) == 3
    assert integrator.counters.steps == 2
    assert all(v.is_zero() for r in records for v in r.point)


def test_fixed_step_counts():
    cfg = small_config(step=StepRule.parse("fixed:0.01"), t_end=0.1, output_every=0.05)
    result = TrajectoryIntegrator(cfg).run()
    assert result.counters.steps == fixed_step_count(0.1, 0.01) == 10
    assert result.counters.multiplications == 10 * multiplications_per_step(cfg.order)


def test_stop_ends_after_current_step():
    integrator = TrajectoryIntegrator(small_config())
    outputs = integrator.iter_outputs()
    next(outputs)
    next(outputs)
    integrator.stop()
    assert list(outputs) == []
    assert integrator.final is None


def test_run_config_validation():
    with pytest.raises(ConfigurationError):
        RunConfig(order=0)
    with pytest.raises(ConfigurationError):
        RunConfig(order=1)  # variable step needs two trailing terms
    RunConfig(order=1, step=StepRule.parse("fixed"))
    with pytest.raises(ConfigurationError):
        RunConfig(t_end=-1.0)
    with pytest.raises(ConfigurationError):
        RunConfig(output_every=0.0)
    with pytest.raises(ConfigurationError):
        RunConfig(checkpoint_every=10)
    with pytest.raises(ConfigurationError):
        RunConfig(checkpoint_seconds=60.0)
    with pytest.raises(ConfigurationError):
        RunConfig(checkpoint_seconds=-1.0, checkpoint_path="run.ckpt")
    with pytest.raises(ConfigurationError):
        RunConfig(ic=("1", "2"))
    with pytest.raises(ConfigurationError):
        RunConfig(ic=("1", "two", "3"))
    with pytest.raises(ConfigurationError):
        RunConfig(digits=12)


def test_digest_tracks_trajectory_fields_only():
    cfg = small_config()
    assert cfg.digest() == cfg.replace(t_end=50.0, layout=WorkerLayout(workers=4)).digest()
    assert cfg.digest() == cfg.replace(output_digits=20).digest()
    assert cfg.digest() != cfg.replace(digits=31).digest()
    assert cfg.digest() != cfg.replace(step=StepRule.parse("fixed:0.01")).digest()
    assert cfg.digest() != cfg.replace(layout=WorkerLayout(workers=1, block_size=7)).digest()


def test_config_layers(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("order: 40\ndigits: 60\nstep: fixed:0.005\nic: [1, 2, 3]\nworkers: 2\n")
    cfg = RunConfig.from_yaml(path)
    assert (cfg.order, cfg.digits) == (40, 60)
    assert cfg.step.fixed_tau == 0.005
    assert cfg.ic == ("1", "2", "3")
    assert cfg.layout.workers == 2
    flagged = RunConfig.from_mapping({"digits": 80, "t_end": None, "block-size": 6}, cfg)
    assert (flagged.order, flagged.digits, flagged.block_size) == (40, 80, 6)
    assert flagged.header().startswith("# config: {")
    with pytest.raises(ConfigurationError):
        RunConfig.from_mapping({"order_n": 3})
    with pytest.raises(ConfigurationError):
        RunConfig.from_yaml(tmp_path / "absent.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError):
        RunConfig.from_yaml(tmp_path / "list.yaml")
