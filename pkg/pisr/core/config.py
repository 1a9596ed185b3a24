"""Configuration for the PISR engine.

Two layers live here:

- `Settings`: process-level knobs read once from environment variables at
  import time (log level, metrics export), like any long-running tool.
- `RunConfig`: everything a run depends on (problem constants, grid, grammar,
  search, constant fitting, paths). It is a pydantic model so a YAML file, the
  environment and CLI flags all go through the same validation.

Notes
-----
- Precedence, lowest to highest: model defaults < YAML file < environment
  (`PISR_<SECTION>_<FIELD>`) < explicit overrides (CLI flags).
- Defaults reproduce the published benchmark setup, so a run needs no flags.
- Environment values are parsed with YAML scalar rules, so `PISR_SEARCH_SEED=7`
  becomes an int and `PISR_GRAMMAR_UNARY="[sin, cos]"` becomes a list.
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Literal, Mapping, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from pisr.core.errors import ConfigError, ExpressionError
from pisr.services.expr import BINARY_OPS, UNARY_OPS, PostfixExpr

ENV_PREFIX = "PISR_"


class Settings:
    """Process-wide settings populated from environment variables."""

    # Logging verbosity (DEBUG/INFO/WARNING/ERROR).
    log_level: str = os.getenv("PISR_LOG_LEVEL", "INFO")

    # Write a Prometheus text file next to the run artifacts.
    metrics_enabled: bool = os.getenv("PISR_METRICS_ENABLED", "true").lower() == "true"


settings = Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProblemSection(_Section):
    """Physical constants and loss options."""

    kind: Literal["soliton", "planted"] = "soliton"
    rho_i: float = Field(1.0 / 1836.0, gt=0, description="electron/ion mass ratio")
    alpha: float = Field(0.4, description="cyclotron/wave frequency ratio")
    v_te: float = Field(0.05, description="electron thermal speed, units of c")
    v_ti: float = Field(0.001, description="ion thermal speed, units of c")
    n0: float = Field(1.0, gt=0, description="reference density")
    omega_sq_coeff: float = Field(0.64, ge=0, description="omega^2 = coeff * n(x)")
    triviality_threshold: float = Field(1e-3, ge=0)
    min_derivative_peak: float = Field(0.0, ge=0, description="0 disables the max|f'| check")
    eq7_form: Literal["standard", "literal"] = "standard"
    data_a_weight: float = Field(10.0, ge=0)
    weight_inside_square: bool = True
    gamma0_init: float = 2.0
    gamma0_bounds: tuple[float, float] = (1.0, 100.0)
    physics_only: bool = False
    # Only used by kind == "planted": postfix tokens of the target function.
    target: list[str] = Field(default_factory=lambda: ["x", "sech"])

    @field_validator("target")
    @classmethod
    def _target_parses(cls, v: list[str]) -> list[str]:
        try:
            PostfixExpr.from_strings(v)
        except ExpressionError as exc:
            raise ValueError(f"invalid target expression: {exc}") from exc
        return v

    @model_validator(mode="after")
    def _gamma0_inside_bounds(self) -> "ProblemSection":
        lo, hi = self.gamma0_bounds
        if not lo <= self.gamma0_init <= hi:
            raise ValueError("gamma0_init must lie inside gamma0_bounds")
        return self


class GridSection(_Section):
    x_min: float = -10.0
    x_max: float = 10.0
    n_points: int = Field(127, ge=2)

    @model_validator(mode="after")
    def _ordered(self) -> "GridSection":
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be smaller than x_max")
        return self


class GrammarSection(_Section):
    """Search grammar: depth and operator whitelists."""

    depth: int = Field(3, ge=1)
    # Per-function overrides, e.g. {"u": 4}.
    depths: dict[str, int] = Field(default_factory=dict)
    unary: list[str] = Field(
        default_factory=lambda: ["neg", "log", "exp", "cos", "sin", "sqrt", "asin", "acos", "tanh", "sech"]
    )
    binary: list[str] = Field(default_factory=lambda: ["add", "sub", "mul", "div", "pow"])
    leaves: list[Literal["variable", "const"]] = Field(default_factory=lambda: ["variable", "const"])
    exact_depth: bool = False
    rng_weights: dict[str, float] = Field(
        default_factory=lambda: {"unary": 1.0, "binary": 1.0, "variable": 1.0, "const": 1.0}
    )

    @field_validator("unary")
    @classmethod
    def _known_unary(cls, v: list[str]) -> list[str]:
        unknown = [op for op in v if op not in UNARY_OPS]
        if unknown:
            raise ValueError(f"unknown unary operator(s): {', '.join(unknown)}")
        return v

    @field_validator("binary")
    @classmethod
    def _known_binary(cls, v: list[str]) -> list[str]:
        unknown = [op for op in v if op not in BINARY_OPS]
        if unknown:
            raise ValueError(f"unknown binary operator(s): {', '.join(unknown)}")
        return v

    @field_validator("leaves")
    @classmethod
    def _some_leaf(cls, v: list[str]) -> list[str]:
        if not v:
            raise ValueError("at least one leaf kind is required")
        return v

    def depth_for(self, name: str) -> int:
        return self.depths.get(name, self.depth)


class SearchSection(_Section):
    driver: Literal["annealing", "brute_force"] = "annealing"
    seed: int = 0
    workers: int = Field(1, ge=1)
    max_evaluations: Optional[int] = Field(20000, ge=1)
    max_wall_seconds: Optional[float] = Field(None, gt=0)
    target_loss: Optional[float] = None
    initial_temperature: float = 1.0
    cooling_ratio: float = Field(0.95, gt=0, lt=1)
    steps_per_temperature: int = Field(200, ge=1)
    min_temperature: float = Field(1e-6, gt=0)
    fit_gate_ratio: float = Field(10.0, gt=0)
    jitter_probability: float = Field(0.2, ge=0, le=1)
    jitter_sigma: float = Field(0.1, gt=0)
    checkpoint_every: int = Field(1000, ge=1)
    init_attempts: int = Field(1000, ge=1)

    @model_validator(mode="after")
    def _stops(self) -> "SearchSection":
        if self.max_evaluations is None and self.max_wall_seconds is None and self.target_loss is None:
            raise ValueError("at least one stopping criterion must be set")
        if not self.initial_temperature > self.min_temperature:
            raise ValueError("initial_temperature must exceed min_temperature")
        return self


class FitSection(_Section):
    method: Literal["lm", "quasi_newton"] = "lm"
    max_iterations: int = Field(50, ge=1)
    gradient_tolerance: float = Field(1e-10, gt=0)
    step_tolerance: float = Field(1e-12, gt=0)
    # Applied to every free (non-reserved) constant slot.
    constant_bounds: Optional[tuple[float, float]] = None


class PathsSection(_Section):
    dataset: Optional[Path] = None
    out_dir: Path = Path("runs/latest")
    checkpoint: Optional[Path] = None

    def checkpoint_path(self) -> Path:
        return self.checkpoint if self.checkpoint is not None else self.out_dir / "checkpoint.json"


class RunConfig(_Section):
    """Complete, validated configuration of one run."""

    problem: ProblemSection = Field(default_factory=ProblemSection)
    grid: GridSection = Field(default_factory=GridSection)
    grammar: GrammarSection = Field(default_factory=GrammarSection)
    search: SearchSection = Field(default_factory=SearchSection)
    fit: FitSection = Field(default_factory=FitSection)
    paths: PathsSection = Field(default_factory=PathsSection)

    @model_validator(mode="after")
    def _soliton_grid_is_mirrored(self) -> "RunConfig":
        # eq13 compares n(x_i) with n(x_{N-1-i}).
        if self.problem.kind == "soliton" and self.grid.x_min != -self.grid.x_max:
            raise ValueError("the soliton problem needs a grid with x_min == -x_max")
        return self


_SECTIONS = {name: field.annotation for name, field in RunConfig.model_fields.items()}


def _env_overrides(env: Mapping[str, str]) -> dict[str, dict[str, Any]]:
    """Collect `PISR_<SECTION>_<FIELD>` variables into a nested dict."""
    out: dict[str, dict[str, Any]] = {}
    for section, model in _SECTIONS.items():
        for field_name in model.model_fields:
            key = f"{ENV_PREFIX}{section}_{field_name}".upper()
            if key in env:
                out.setdefault(section, {})[field_name] = yaml.safe_load(env[key])
    return out


def _merge(base: dict[str, Any], extra: Mapping[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def load_config(
    path: Path | str | None = None,
    overrides: Mapping[str, Mapping[str, Any]] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Build a RunConfig from defaults, an optional YAML file, env and overrides.

    Raises
    ------
    ConfigError
        If the file cannot be read or any value fails validation.
    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping of sections")
        data = loaded or {}

    data = _merge(data, _env_overrides(os.environ if env is None else env))
    if overrides:
        data = _merge(data, {k: dict(v) for k, v in overrides.items() if v})

    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(config: RunConfig, path: Path | str) -> Path:
    """Write the effective config as YAML; `load_config` reads it back unchanged."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = config.model_dump(mode="json")
    path.write_text(yaml.safe_dump(payload, sort_keys=False), encoding="utf-8")
    return path
