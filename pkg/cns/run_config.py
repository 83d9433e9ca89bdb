"""Run configuration: defaults from config.py, then a YAML file, then flags."""
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from config import (
    DEFAULT_DIGITS,
    DEFAULT_ORDER,
    DEFAULT_OUTPUT_DIGITS,
    DEFAULT_OUTPUT_EVERY,
    DEFAULT_T_END,
    INITIAL_CONDITION,
    LORENZ_PARAMS,
)
from cns.errors import ConfigurationError, ParseError
from cns.lorenz_taylor import LorenzParams, LorenzState
from cns.mp_scalar import PrecisionCtx, make_ctx
from cns.reduction_engine import WorkerLayout
from cns.step_control import StepMode, StepRule


def parse_triple(text) -> tuple[str, str, str]:
    """'x,y,z' or a 3-sequence into three decimal strings."""
    parts = text.split(",") if isinstance(text, str) else list(text)
    if len(parts) != 3:
        raise ConfigurationError(f"expected three comma-separated values, got {text!r}")
    return tuple(str(p).strip() for p in parts)


@dataclass(frozen=True)
class RunConfig:
    order: int = DEFAULT_ORDER
    digits: int = DEFAULT_DIGITS
    step: StepRule = field(default_factory=StepRule)
    t_end: float = DEFAULT_T_END
    ic: tuple[str, str, str] = INITIAL_CONDITION
    output_every: float = DEFAULT_OUTPUT_EVERY
    layout: WorkerLayout = field(default_factory=WorkerLayout)
    checkpoint_every: int = 0  # steps between checkpoints; 0 disables them
    checkpoint_seconds: float = 0.0  # wall-clock interval, alongside or instead of the step count
    checkpoint_path: str | None = None
    output_digits: int = DEFAULT_OUTPUT_DIGITS
    params: tuple[str, str, str] = LORENZ_PARAMS

    def __post_init__(self):
        if self.order < 1:
            raise ConfigurationError(f"order must be >= 1, got {self.order}")
        if self.step.mode is StepMode.VARIABLE and self.order < 2:
            raise ConfigurationError("variable stepsize needs order >= 2")
        if not (math.isfinite(self.t_end) and self.t_end >= 0):
            raise ConfigurationError(f"t_end must be >= 0, got {self.t_end}")
        if not (math.isfinite(self.output_every) and self.output_every > 0):
            raise ConfigurationError(f"output spacing must be positive, got {self.output_every}")
        if self.checkpoint_every < 0:
            raise ConfigurationError("checkpoint_every must be >= 0")
        if not (math.isfinite(self.checkpoint_seconds) and self.checkpoint_seconds >= 0):
            raise ConfigurationError("checkpoint_seconds must be >= 0")
        if (self.checkpoint_every or self.checkpoint_seconds) and not self.checkpoint_path:
            raise ConfigurationError("checkpointing needs a checkpoint path")
        if self.output_digits < 1:
            raise ConfigurationError("output digits must be >= 1")
        object.__setattr__(self, "ic", parse_triple(self.ic))
        object.__setattr__(self, "params", parse_triple(self.params))
        # ic and params must parse at precision K
        try:
            ctx = self.ctx
            LorenzState.from_decimals(ctx, self.ic)
            LorenzParams.from_strings(ctx, self.params)
        except ParseError as e:
            raise ConfigurationError(str(e)) from None

    @property
    def ctx(self) -> PrecisionCtx:
        return make_ctx(self.digits)

    @property
    def block_size(self) -> int:
        return self.layout.resolve_block_size(self.order)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def without_checkpoints(self) -> "RunConfig":
        """Same trajectory with checkpointing switched off, for auxiliary runs."""
        return self.replace(checkpoint_every=0, checkpoint_seconds=0.0, checkpoint_path=None)

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "digits": self.digits,
            "step": self.step.label,
            "safety": self.step.safety,
            "damping": self.step.damping,
            "t_end": self.t_end,
            "ic": list(self.ic),
            "output_every": self.output_every,
            "workers": self.layout.workers,
            "group_size": self.layout.group_size,
            "block_size": self.block_size,
            "checkpoint_every": self.checkpoint_every,
            "checkpoint_seconds": self.checkpoint_seconds,
            "checkpoint_path": self.checkpoint_path,
            "output_digits": self.output_digits,
            "params": list(self.params),
        }

    def digest(self) -> str:
        """Hash of everything that can change a bit of the trajectory."""
        data = self.to_dict()
        volatile = ("t_end", "workers", "group_size", "checkpoint_every", "checkpoint_seconds", "checkpoint_path", "output_digits")
        for key in volatile:
            data.pop(key)
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()

    def header(self) -> str:
        return "# config: " + json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_mapping(cls, data: dict, base: "RunConfig | None" = None) -> "RunConfig":
        """Overlay a flat mapping (YAML file or CLI flags) on a base config."""
        base = base or cls()
        data = {k.replace("-", "_"): v for k, v in data.items() if v is not None}
        unknown = set(data) - _MAPPING_KEYS
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        step = base.step
        if "step" in data:
            step = StepRule.parse(str(data["step"]))
        if "safety" in data or "damping" in data:
            step = dataclasses.replace(
                step, safety=float(data.get("safety", step.safety)), damping=float(data.get("damping", step.damping))
            )
        layout = WorkerLayout(
            workers=int(data.get("workers", base.layout.workers)),
            group_size=data.get("group_size", base.layout.group_size if "workers" not in data else None),
            block_size=data.get("block_size", base.layout.block_size),
        )
        changes = {"step": step, "layout": layout}
        for key, kind in (
            ("order", int),
            ("digits", int),
            ("t_end", float),
            ("output_every", float),
            ("checkpoint_every", int),
            ("checkpoint_seconds", float),
            ("checkpoint_path", str),
            ("output_digits", int),
        ):
            if key in data:
                changes[key] = kind(data[key])
        for key in ("ic", "params"):
            if key in data:
                changes[key] = parse_triple(data[key])
        try:
            return dataclasses.replace(base, **changes)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigurationError):
                raise
            raise ConfigurationError(str(e)) from None

    @classmethod
    def from_yaml(cls, path, base: "RunConfig | None" = None) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found at {path}")
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"config file {path} must hold a mapping")
        return cls.from_mapping(data, base)


_MAPPING_KEYS = {
    "order",
    "digits",
    "step",
    "safety",
    "damping",
    "t_end",
    "ic",
    "output_every",
    "workers",
    "group_size",
    "block_size",
    "checkpoint_every",
    "checkpoint_seconds",
    "checkpoint_path",
    "output_digits",
    "params",
}
