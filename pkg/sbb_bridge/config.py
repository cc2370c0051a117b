"""
Configuration models
Solver parameters and batch run settings, validated with pydantic.
"""

import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    beta: float = Field(..., gt=0, description="Diffusion penalty weight")
    T: float = Field(..., gt=0, description="Time horizon")
    n: int = Field(1024, ge=16, description="Spatial grid nodes")
    m: int = Field(256, ge=16, description="Time steps")
    x_min: Optional[float] = Field(None, description="Left end of the grid (derived from marginals if omitted)")
    x_max: Optional[float] = Field(None, description="Right end of the grid (derived from marginals if omitted)")
    damping: float = Field(0.5, gt=0, le=1, description="Fixed-point damping omega")
    max_iter: int = Field(500, ge=1, description="Iteration budget of the dual ascent")
    tol_residual: float = Field(1e-5, gt=0, description="L1 gradient tolerance")
    max_log_step: float = Field(2.0, gt=0, description="Clip on the log-ratio update")
    seed: int = Field(0, ge=0, description="Single source of randomness")

    @model_validator(mode="after")
    def check_existence_condition(self) -> "SolverConfig":
        if self.beta * self.T <= 1.0:
            raise ConfigError(f"beta*T must exceed 1 (got beta*T={self.beta * self.T:g})")
        if (self.x_min is None) != (self.x_max is None):
            raise ConfigError("x_min and x_max must be given together")
        if self.x_min is not None and self.x_min >= self.x_max:
            raise ConfigError(f"x_min must be below x_max (got {self.x_min} >= {self.x_max})")
        return self

    @property
    def delta(self) -> float:
        """Slack 1 - 1/(beta*T) of the existence condition"""
        return 1.0 - 1.0 / (self.beta * self.T)

    @property
    def dt(self) -> float:
        return self.T / self.m


class GaussianSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    type: Literal["gaussian"] = "gaussian"
    mean: float = Field(0.0, description="Mean")
    var: float = Field(..., gt=0, description="Variance")


class CsvSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    type: Literal["csv"] = "csv"
    path: str = Field(..., description="CSV file with header x,density")


MarginalSpec = Union[GaussianSpec, CsvSpec]


class SweepPoint(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    beta: float = Field(..., gt=0)
    T: Optional[float] = Field(None, gt=0, description="Horizon; falls back to the solver T")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: Literal["solve", "simulate", "validate", "sweep-beta"] = "solve"
    mu0: MarginalSpec = Field(..., discriminator="type", description="Initial marginal")
    muT: MarginalSpec = Field(..., discriminator="type", description="Terminal marginal")
    solver: SolverConfig
    out: str = Field("sbb_out", description="Output directory")
    paths: int = Field(100_000, ge=2, description="Monte-Carlo paths")
    emit_paths: bool = Field(False, description="Dump per-path trajectories (capped at 1000 paths)")
    sweep: List[SweepPoint] = Field(default_factory=list, description="(beta, T) points for sweep-beta")
    sinkhorn: bool = Field(False, description="Add the Sinkhorn reference value to sweeps")
    duality_rel_budget: float = Field(0.02, ge=0, description="Relative part of the strong-duality budget")
    workers: int = Field(1, ge=1, description="Concurrent sweep rows")

    @field_validator("out")
    @classmethod
    def check_out(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("output directory must be a non-empty path")
        return value

    def echo(self) -> Dict[str, Any]:
        """Fully resolved config for the JSON outputs"""
        return self.model_dump(mode="json")


def parse_beta_list(text: str) -> List[Dict[str, float]]:
    """Parse "2,4:0.5,8" into [{"beta": 2}, {"beta": 4, "T": 0.5}, {"beta": 8}]"""
    points = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        beta, _, T = item.partition(":")
        try:
            point = {"beta": float(beta)}
            if T:
                point["T"] = float(T)
        except ValueError:
            raise ConfigError(f"cannot parse beta list item {item!r}; expected b or b:T")
        points.append(point)
    return points


def load_run_config(path: Optional[str], overrides: Optional[Dict[str, Any]] = None,
                    base: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults < base (e.g. a stored run) < JSON config file < CLI overrides"""
    data: Dict[str, Any] = copy.deepcopy(base) if base else {}
    if path is not None:
        try:
            file_data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {path}: {e}")
        if not isinstance(file_data, dict):
            raise ConfigError(f"config file must hold a JSON object: {path}")
        solver = {**data.get("solver", {}), **file_data.pop("solver", {})}
        data.update(file_data)
        if solver:
            data["solver"] = solver

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in SolverConfig.model_fields:
            data.setdefault("solver", {})[key] = value
        else:
            data[key] = value

    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}")

    logger.debug(f"Resolved config: {config.echo()}")
    return config
