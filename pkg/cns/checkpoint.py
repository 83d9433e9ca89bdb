"""Text checkpoints: config digest line first, then exact decimals.

Example::

    digest 3f1c...
    step 1200
    next_output 37
    t 3.6123...e+1
    x -1.02...e+1
    y ...
    z ...
    multiplications 17424000
    tau_sum 0x1.2000000000000p+5
    wall_time 81.2
"""
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from cns.errors import CheckpointError, ParseError
from cns.lorenz_taylor import LorenzState
from cns.mp_scalar import PrecisionCtx, format_scalar, parse

logger = logging.getLogger(__name__)

_FIELDS = ("digest", "step", "next_output", "t", "x", "y", "z", "multiplications", "tau_sum", "wall_time")


@dataclass(frozen=True)
class Checkpoint:
    digest: str
    step_index: int
    next_output: int  # index of the first output grid time not yet emitted
    state: LorenzState
    multiplications: int
    tau_sum: float
    wall_time: float

    def to_text(self) -> str:
        s = self.state
        lines = [
            f"digest {self.digest}",
            f"step {self.step_index}",
            f"next_output {self.next_output}",
            f"t {format_scalar(s.t)}",
            f"x {format_scalar(s.x0)}",
            f"y {format_scalar(s.y0)}",
            f"z {format_scalar(s.z0)}",
            f"multiplications {self.multiplications}",
            f"tau_sum {self.tau_sum.hex()}",
            f"wall_time {self.wall_time!r}",
        ]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        """Write atomically: a crash mid-write leaves the previous checkpoint intact."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w") as f:
            f.write(self.to_text())
        os.replace(tmp, path)
        logger.info(f"[Checkpoint] Saved step {self.step_index} to {path}")

    @classmethod
    def from_text(cls, text: str, ctx: PrecisionCtx) -> "Checkpoint":
        entries = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition(" ")
            entries[key] = value.strip()
        first = text.lstrip().split(" ", 1)[0]
        if first != "digest":
            raise CheckpointError("checkpoint must start with the config digest line")
        missing = [k for k in _FIELDS if k not in entries]
        if missing:
            raise CheckpointError(f"checkpoint lacks fields: {', '.join(missing)}")
        try:
            state = LorenzState(*(parse(entries[k], ctx) for k in ("t", "x", "y", "z")))
            return cls(
                digest=entries["digest"],
                step_index=int(entries["step"]),
                next_output=int(entries["next_output"]),
                state=state,
                multiplications=int(entries["multiplications"]),
                tau_sum=float.fromhex(entries["tau_sum"]),
                wall_time=float(entries["wall_time"]),
            )
        except (ParseError, ValueError) as e:
            raise CheckpointError(f"malformed checkpoint: {e}") from None

    @classmethod
    def load(cls, path, ctx: PrecisionCtx, expected_digest: str | None = None) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found at {path}")
        checkpoint = cls.from_text(path.read_text(), ctx)
        if expected_digest is not None and checkpoint.digest != expected_digest:
            raise CheckpointError(
                f"checkpoint {path} belongs to config {checkpoint.digest[:12]}, not {expected_digest[:12]}"
            )
        return checkpoint
