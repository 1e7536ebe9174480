"""
Experiment configuration.

One validated tree per run. Unknown keys are rejected and every numeric key is
range checked before any compute starts.
"""
import logging
import os
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from hypokinetic.errors import ConfigError
from hypokinetic.io_utils import config_hash, load_config_file
from hypokinetic.model import Coefficient, ModelParams
from hypokinetic.spectral import DEFAULT_MEMORY_BUDGET, make_grid

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "HYPO_OUTPUT_ROOT"

CHECKS = (
    "prop-bouchut", "step1", "step2", "step3", "thm1", "thm2",
    "split-ab", "balance", "step4", "ivp-term", "lemma-q", "lemma-p", "exponent-fit",
)
SWEEP_PARAMETERS = ("beta", "N", "q", "corpus-size")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Section):
    n: Literal[1, 2] = 1
    N_t: int = Field(16, ge=4)
    N_x: int = Field(16, ge=4)
    N_v: int = Field(64, ge=4)
    L_t: float = Field(2 * np.pi, gt=0)
    L_x: float = Field(2 * np.pi, gt=0)
    L_v: float = Field(16 * np.pi, gt=0)
    memory_budget: int = Field(DEFAULT_MEMORY_BUDGET, gt=0)
    workers: int = Field(1, ge=1)

    @field_validator("N_t", "N_x", "N_v")
    @classmethod
    def _even(cls, value):
        if value % 2:
            raise ValueError(f"must be even, got {value}")
        return value

    def build(self):
        return make_grid(self.n, self.N_t, self.N_x, self.N_v, self.L_t, self.L_x, self.L_v,
                         memory_budget=self.memory_budget, workers=self.workers)


class ModelConfig(_Section):
    beta: float = Field(1.0, gt=0, le=1)
    coefficient: Literal["constant", "bump"] = "constant"
    a_minus: float = Field(0.1, gt=0)
    amplitude: float = Field(1.0, ge=0)
    margin: float = Field(0.1, gt=0, lt=0.5)
    form: Literal["squared", "linear"] = "squared"
    dealias: bool = False
    solver_tol: float = Field(1e-10, gt=0)
    max_iterations: int = Field(200, ge=1)

    def coefficient_for(self, grid):
        """The bump recipe on the grid, or None for a = 1."""
        if self.coefficient == "constant":
            return None
        return Coefficient.bump(grid, a_minus=self.a_minus, amplitude=self.amplitude,
                                margin=self.margin, form=self.form)

    def params(self, grid, coefficient=True):
        return ModelParams(
            beta=self.beta,
            coefficient=self.coefficient_for(grid) if coefficient else None,
            dealias=self.dealias,
            solver_tol=self.solver_tol,
            max_iterations=self.max_iterations,
        )


class CorpusConfig(_Section):
    size: int = Field(50, ge=1)
    seed: int = Field(0, ge=0)
    q: Optional[float] = Field(None, gt=0)
    n_jobs: int = 1


class CheckConfig(_Section):
    alpha: float = Field(1.0, ge=0)
    symbol: Literal["aniso", "bracket_aniso"] = "aniso"
    delta: float = Field(0.0, ge=0)
    max_ratio: float = Field(1e6, gt=0)
    refine: bool = True
    refinement_tol: float = Field(0.1, gt=0)
    k_index: int = 1


class SolveConfig(_Section):
    T: float = Field(1.0, gt=0)
    dt: float = Field(0.125, gt=0)
    initial: Literal["zero", "random"] = "random"
    source: Literal["zero", "random"] = "zero"
    compare_oracle: bool = True
    tolerance: float = Field(1e-2, gt=0)

    @model_validator(mode="after")
    def _divides(self):
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")
        return self


class ScalingConfig(_Section):
    scale_min: float = Field(1.0, gt=0)
    scale_max: float = Field(1000.0, gt=0)
    count: int = Field(7, ge=5)
    N_v: int = Field(512, ge=4)
    N_t: int = Field(256, ge=4)
    s_step: float = Field(0.01, gt=0)
    s_max: float = Field(1.5, gt=0)
    slope_tol: float = Field(0.02, gt=0)
    tolerance: float = Field(0.05, gt=0)
    sharpness_offset: float = Field(0.15, gt=0)
    min_growth: float = Field(2.0, gt=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.scale_max <= self.scale_min:
            raise ValueError("scale_max must exceed scale_min")
        return self


class QuadratureConfig(_Section):
    h0: Optional[float] = Field(None, gt=0)
    nodes: int = Field(8, ge=2)
    weight_order: Literal["principal", "literal"] = "principal"
    power_iterations: int = Field(100, ge=1)
    power_tol: float = Field(1e-6, gt=0)
    commutator_corpus: int = Field(8, ge=1)
    kernel_tol: float = Field(1e-2, gt=0)


class ExperimentConfig(_Section):
    """Root of the configuration tree; `defaults` prints it with every default filled in."""
    grid: GridConfig = GridConfig()
    model: ModelConfig = ModelConfig()
    corpus: CorpusConfig = CorpusConfig()
    check: CheckConfig = CheckConfig()
    solve: SolveConfig = SolveConfig()
    scaling: ScalingConfig = ScalingConfig()
    quadrature: QuadratureConfig = QuadratureConfig()
    output_dir: str = "output"

    @property
    def hash(self):
        return config_hash(self.model_dump(mode="json"))

    def output_root(self):
        """$HYPO_OUTPUT_ROOT when set, otherwise output_dir."""
        return Path(os.environ.get(OUTPUT_ROOT_ENV) or self.output_dir)

    def updated(self, **sections):
        """
        Copy with nested keys replaced, e.g. updated(model={"beta": 0.5}); the
        result is validated again.
        """
        data = self.model_dump()
        for section, values in sections.items():
            if isinstance(values, dict):
                data[section] = {**data[section], **values}
            else:
                data[section] = values
        return validate_config(data)


def _format_errors(exc):
    parts = []
    for error in exc.errors():
        key = ".".join(str(p) for p in error["loc"]) or "<root>"
        parts.append(f"{key}: {error['msg']}")
    return "; ".join(parts)


def validate_config(data):
    """
    Validate a plain dict into an ExperimentConfig.

    Raises:
        ConfigError: With one "key: message" entry per failing key.
    """
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc


def load_config(path=None):
    """Defaults when path is None, otherwise the validated file contents."""
    if path is None:
        return ExperimentConfig()
    return validate_config(load_config_file(path))


def parse_grid_override(text):
    """'N_t,N_x,N_v' or a single N for all three."""
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"grid: expected N or N_t,N_x,N_v, got {text!r}")
    if len(values) == 1:
        values = values * 3
    if len(values) != 3:
        raise ConfigError(f"grid: expected N or N_t,N_x,N_v, got {text!r}")
    return dict(zip(("N_t", "N_x", "N_v"), values))


def apply_overrides(config, seed=None, grid=None, beta=None):
    """Apply the --seed, --grid and --beta command-line overrides."""
    sections = {}
    if seed is not None:
        sections["corpus"] = {"seed": seed}
    if grid is not None:
        sections["grid"] = parse_grid_override(grid)
    if beta is not None:
        sections["model"] = {"beta": beta}
    return config.updated(**sections) if sections else config


def sweep_update(config, parameter, value):
    """Config for one sweep point."""
    if parameter == "beta":
        return config.updated(model={"beta": float(value)})
    if parameter == "N":
        N = int(value)
        return config.updated(grid={"N_t": N, "N_x": N, "N_v": N})
    if parameter == "q":
        return config.updated(corpus={"q": float(value)})
    if parameter == "corpus-size":
        return config.updated(corpus={"size": int(value)})
    raise ConfigError(f"unknown sweep parameter {parameter!r}; choose from {', '.join(SWEEP_PARAMETERS)}")
