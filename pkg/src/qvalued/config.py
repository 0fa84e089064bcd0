"""Run configuration shared by the CLI and the acceptance suite."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .diff import DecisionRule
from .errors import FormatError, PreconditionError
from .space import PointCloudSpace, RadiiSchedule

__all__ = ["ExperimentConfig"]


@dataclass
class ExperimentConfig:
    """Tolerances, schedule and execution knobs; a fixed seed makes a full
    run deterministic regardless of the parallelism degree."""

    r0: float | None = None          # None: 0.25 * domain diameter
    theta: float = 0.5
    m: int = 8
    metric_eq: float = 1e-9
    eqty_tol: float | None = None    # None: scale-aware per-value default
    floor: float = 1e-6
    slope_threshold: float = 0.5
    infinity_threshold: float | None = None  # None: 10x global sampled Lipschitz
    fit_radius: float | None = None  # None: smallest well populated scheduled radius
    interior_tol: float = 0.1
    seed: int = 0
    threads: int = 1
    out: str | None = None

    def __post_init__(self):
        for name in ("metric_eq", "floor", "slope_threshold", "interior_tol"):
            if getattr(self, name) <= 0:
                raise PreconditionError(f"{name} must be positive")
        if self.threads < 1:
            raise PreconditionError("threads must be >= 1")

    def schedule_for(self, space: PointCloudSpace) -> RadiiSchedule:
        r0 = self.r0 if self.r0 is not None else 0.25 * space.diameter()
        return RadiiSchedule(r0=r0, theta=self.theta, m=self.m)

    def decision(self) -> DecisionRule:
        return DecisionRule(ratio_drop=self.slope_threshold, floor=self.floor)

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise FormatError(f"no such config file: {path}") from None
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON in {path}: {exc}") from None
        if not isinstance(data, dict):
            raise FormatError("config file must hold a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise FormatError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def echo(self) -> dict:
        """Config echo for result files: analytic knobs only, so outputs are
        identical across parallelism degrees and output paths."""
        d = asdict(self)
        for key in ("threads", "out"):
            d.pop(key, None)
        return d
