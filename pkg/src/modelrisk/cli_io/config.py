"""Run configuration: defaults, JSON config files and command-line overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from ..calibration import CalibrationConfig, ModelKind
from ..entropy_dual import SolverConfig
from ..measure import DEFAULT_GRID_SIZE
from ..risk_engine import EngineConfig, Frequency
from .market import FilterConfig


class ConfigError(ValueError):
    """Invalid configuration; a usage error at the command line."""


ALL_MODELS = tuple(m.value for m in ModelKind)
ALL_FREQUENCIES = tuple(f.value for f in Frequency)


@dataclass(frozen=True)
class RunConfig:
    models: tuple = ALL_MODELS
    frequencies: tuple = ALL_FREQUENCIES
    grid_size: int = DEFAULT_GRID_SIZE
    solver: SolverConfig = SolverConfig()
    calibration_max_iter: int = 50
    param_tol: float = 1e-3
    filter: FilterConfig = FilterConfig()
    bucket_edges: tuple = (0.2, 0.7)
    out_dir: str = "out"
    workers: int = 1

    def __post_init__(self):
        try:
            models = tuple(ModelKind(m).value for m in self.models)
            freqs = tuple(Frequency(f).value for f in self.frequencies)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not models or not freqs:
            raise ConfigError("at least one model and one frequency are required")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "frequencies", freqs)
        edges = tuple(float(e) for e in self.bucket_edges)
        if not edges or any(b <= a for a, b in zip(edges, edges[1:])) or edges[0] <= 0:
            raise ConfigError("bucket edges must be positive and strictly increasing")
        object.__setattr__(self, "bucket_edges", edges)
        n = self.grid_size
        if n < 64 or n & (n - 1):
            raise ConfigError("grid size must be a power of two, at least 64")
        s = self.solver
        positive = {
            "solver.grad_tol": s.grad_tol,
            "solver.delta_start": s.delta_start,
            "solver.delta_min": s.delta_min,
            "solver.feasibility_tol": s.feasibility_tol,
            "param_tol": self.param_tol,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{name} must be positive")
        if s.delta_shrink <= 1:
            raise ConfigError("solver.delta_shrink must exceed 1")
        if s.max_iter < 1 or self.calibration_max_iter < 1 or self.workers < 1:
            raise ConfigError("iteration caps and worker count must be positive")
        if not 0 <= self.filter.min_delta < self.filter.max_delta <= 1:
            raise ConfigError("filter deltas must satisfy 0 <= min < max <= 1")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        try:
            if "solver" in data:
                data["solver"] = SolverConfig(**data["solver"])
            if "filter" in data:
                data["filter"] = FilterConfig(**data["filter"])
            for key in ("models", "frequencies", "bucket_edges"):
                if key in data:
                    data[key] = tuple(data[key])
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        data.pop("scenario", None)  # synthetic scenario, read by `synth`
        return cls.from_dict(data)

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        """SHA-256 of the canonical JSON form, without settings that cannot change results."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def engine_config(self):
        cal = CalibrationConfig(
            max_iter=self.calibration_max_iter,
            param_tol=self.param_tol,
            grid_size=self.grid_size,
            solver=self.solver,
        )
        return EngineConfig(calibration=cal, bucket_edges=self.bucket_edges, workers=self.workers)
