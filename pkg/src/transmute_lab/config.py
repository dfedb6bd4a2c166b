"""Experiment configuration: one JSON document per run, validated before any numerics."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .presets import METRIC_PRESETS, POTENTIAL_PRESETS

EXPERIMENTS = (
    "spectrum-check", "extension-check", "semigroup-check", "kannai-check", "wkb-order",
    "boundary-recover", "potential-recover", "gauge-invariance", "wave-check", "heat-moments",
)
ExperimentName = Literal[
    "spectrum-check", "extension-check", "semigroup-check", "kannai-check", "wkb-order",
    "boundary-recover", "potential-recover", "gauge-invariance", "wave-check", "heat-moments",
]

Interval = tuple[float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSpec(_Strict):
    domain: list[Interval] = Field(min_length=1, max_length=2)
    nodes: int | list[int]

    @field_validator("domain")
    @classmethod
    def _extents(cls, v):
        for a, b in v:
            if not b > a:
                raise ValueError("each domain interval needs upper > lower")
        return v

    @property
    def dim(self) -> int:
        return len(self.domain)

    def node_counts(self) -> list[int]:
        n = self.nodes if isinstance(self.nodes, list) else [self.nodes] * self.dim
        return list(n)

    @model_validator(mode="after")
    def _counts(self):
        n = self.node_counts()
        if len(n) != self.dim or min(n) < 8:
            raise ValueError("need at least 8 nodes on each axis")
        return self

    def spacing(self) -> float:
        return max((b - a) / (m - 1) for (a, b), m in zip(self.domain, self.node_counts()))


class FieldSpec(_Strict):
    preset: str
    params: dict[str, Any] = Field(default_factory=dict)


class WindowSpec(_Strict):
    bounds: list[Interval]


class ProbeSpec(_Strict):
    centers: list[list[float]] = Field(default_factory=list)
    width: float = Field(gt=0)
    xi: list[list[float]] = Field(default_factory=list)
    N: Optional[list[float]] = None

    @field_validator("N")
    @classmethod
    def _increasing(cls, v):
        if v is not None and (len(v) < 3 or any(b <= a for a, b in zip(v, v[1:])) or v[0] < 1):
            raise ValueError("N list needs at least 3 increasing entries >= 1")
        return v


class DiffeoSpec(_Strict):
    kind: Literal["identity", "bump"] = "identity"
    center: list[float] = Field(default_factory=list)
    radius: float = 0.0
    amplitude: list[float] = Field(default_factory=list)
    frozen: list[Interval] = Field(default_factory=list)


class ExperimentConfig(_Strict):
    experiment: ExperimentName
    id: Optional[str] = None
    seed: int = 0
    grid: GridSpec
    metric: FieldSpec = FieldSpec(preset="identity")
    potential: FieldSpec = FieldSpec(preset="zero-potential")
    window: Optional[WindowSpec] = None
    probe: Optional[ProbeSpec] = None
    diffeomorphism: Optional[DiffeoSpec] = None
    tolerances: dict[str, float] = Field(default_factory=dict)
    params: dict[str, Any] = Field(default_factory=dict)
    output_dir: str = "results"

    @property
    def experiment_id(self) -> str:
        return self.id or self.experiment

    @field_validator("id")
    @classmethod
    def _safe_id(cls, v):
        if v is not None and (not v or any(c in v for c in '/\\:*?"<>|')):
            raise ValueError("id must be a plain file-name stem")
        return v

    @field_validator("tolerances")
    @classmethod
    def _positive(cls, v):
        bad = [k for k, x in v.items() if not (x > 0 and math.isfinite(x))]
        if bad:
            raise ValueError(f"tolerances must be positive: {bad}")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        dim = self.grid.dim
        if self.metric.preset not in METRIC_PRESETS:
            raise ValueError(f"unknown metric preset {self.metric.preset!r}; choose from {METRIC_PRESETS}")
        if self.potential.preset not in POTENTIAL_PRESETS:
            raise ValueError(f"unknown potential preset {self.potential.preset!r}; choose from {POTENTIAL_PRESETS}")
        if self.metric.preset == "offdiag-bump" and dim != 2:
            raise ValueError("offdiag-bump is a 2D preset")
        if self.window is not None and len(self.window.bounds) != dim:
            raise ValueError("window dimension differs from the grid")
        if self.probe is not None:
            for c in self.probe.centers:
                if len(c) != dim:
                    raise ValueError("probe center dimension differs from the grid")
            for xi in self.probe.xi:
                if len(xi) != dim or not any(xi):
                    raise ValueError("probe covectors must be nonzero with the grid dimension")
            # the guard protects grid data fed to the discrete ND map; WKB residuals are closed-form
            if self.probe.N is not None and self.probe.xi and self.experiment != "wkb-order":
                h = self.grid.spacing()
                cap = min(math.pi / 4 / (math.hypot(*xi) * h) for xi in self.probe.xi)
                if self.probe.N[-1] > cap * (1 + 1e-12):
                    raise ValueError(f"N list violates the aliasing guard N|xi|h <= pi/4 (max N {cap:.4g})")
        if self.diffeomorphism is not None and self.diffeomorphism.kind == "bump":
            d = self.diffeomorphism
            if len(d.center) != dim or len(d.amplitude) != dim or len(d.frozen) != dim or d.radius <= 0:
                raise ValueError("bump diffeomorphism needs center, amplitude and frozen box of the grid dimension")
        return self


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a JSON config file (raises ValueError on any problem)."""
    try:
        text = Path(path).read_text()
        data = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.model_validate(data)
