"""
Boosted Decay Lab - Pydantic Schemas
Run configuration, model parameters and report records, with config loading
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError


# ============================================================
# MODEL PARAMETERS
# ============================================================

class ModelParams(BaseModel):
    """Masses, coupling and form factor of the a <-> b + c vertex."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    m_a: float = Field(gt=0, description="Rest mass of the unstable particle a")
    m_b: float = Field(gt=0, description="Rest mass of decay product b")
    m_c: float = Field(gt=0, description="Rest mass of decay product c")
    g: float = Field(ge=0, description="Coupling strength (energy units)")
    lambda_ff: float = Field(gt=0, description="Gaussian form-factor width (momentum units)")

    @model_validator(mode="after")
    def validate_channel_open(self):
        if not self.m_a > self.m_b + self.m_c:
            raise ValueError(
                f"decay channel closed: m_a={self.m_a} <= m_b + m_c={self.m_b + self.m_c}"
            )
        return self


# ============================================================
# RUN CONFIGURATION
# ============================================================

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSettings(_Section):
    n_modes: int = Field(ge=1, description="Odd number of momentum modes")
    dk: float = Field(gt=0, description="Momentum spacing")

    @field_validator("n_modes")
    @classmethod
    def validate_odd(cls, v):
        if v % 2 == 0:
            raise ValueError(f"n_modes must be odd so that k = 0 is a mode, got {v}")
        return v


class TimeGridSettings(_Section):
    t_max: Optional[float] = Field(default=None, gt=0,
                                   description="Last sample time; null derives it from the golden rule and recurrence guard")
    samples: int = Field(default=400, ge=2, description="Uniform samples including t = 0")


class BoostSettings(_Section):
    use_refined: bool = Field(default=False, description="Refine N by least squares before use")
    beta_sweep: List[float] = Field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 11)],
                                    description="Rapidities for the boost-identity sweep")
    probe_width: float = Field(default=0.35, gt=0, description="Width of the smooth probe state")
    lsq_max_iterations: Optional[int] = Field(default=None, ge=1,
                                              description="Cap on refinement iterations; null means 10 x unknowns")


class FitSettings(_Section):
    abs2_lo: float = Field(default=0.05, gt=0, lt=1)
    abs2_hi: float = Field(default=0.9, gt=0, lt=1)
    min_r_squared: float = Field(default=0.999, ge=0, le=1)
    min_samples: int = Field(default=20, ge=3)
    dilation_tolerance: float = Field(default=0.05, gt=0)
    curve_tolerance: float = Field(default=0.02, gt=0)
    golden_rule_tolerance: float = Field(default=0.10, gt=0)

    @model_validator(mode="after")
    def validate_band(self):
        if not self.abs2_lo < self.abs2_hi:
            raise ValueError(f"abs2_lo={self.abs2_lo} must be below abs2_hi={self.abs2_hi}")
        return self


class MixtureSettings(_Section):
    weights: List[float] = Field(default_factory=lambda: [math.sqrt(0.5), math.sqrt(0.5)],
                                 description="Amplitudes of the boosted packet and the momentum eigenstate")
    tolerance: float = Field(default=0.25, gt=0, description="Relative tolerance on the gamma^2 rate ratio")

    @field_validator("weights")
    @classmethod
    def validate_weights(cls, v):
        if len(v) != 2:
            raise ValueError(f"weights must hold exactly two amplitudes, got {len(v)}")
        if abs(v[0] ** 2 + v[1] ** 2 - 1.0) > 1e-9:
            raise ValueError(f"weights {v} are not normalized")
        return v


class AppendixSettings(_Section):
    ode_step: float = Field(default=1e-3, gt=0)
    ode_beta_max: float = Field(default=2.0, gt=0)
    bch_beta: float = Field(default=0.01, description="BCH check rapidity; beta |N| must stay well below 1")
    bch_max_order: int = Field(default=8, ge=0)
    span_beta: float = Field(default=0.5)


class RunConfig(_Section):
    """Everything one run needs; echoed verbatim into its report."""
    model: ModelParams
    grid: GridSettings
    packet_width: Optional[float] = Field(default=None, gt=0, description="Packet width; null means 4 dk")
    velocities: List[float] = Field(default_factory=lambda: [0.2, 0.5, 0.8])
    momenta: List[float] = Field(default_factory=lambda: [0.5, 1.0])
    t_grid: TimeGridSettings = Field(default_factory=TimeGridSettings)
    boost: BoostSettings = Field(default_factory=BoostSettings)
    fit: FitSettings = Field(default_factory=FitSettings)
    mixture: MixtureSettings = Field(default_factory=MixtureSettings)
    appendix: AppendixSettings = Field(default_factory=AppendixSettings)
    dense_limit: int = Field(default=4000, ge=1, description="Largest basis for full dense operators")
    workers: int = Field(default=1, ge=1, description="Thread pool size for scan cells")
    output_dir: str = Field(default="output/run")

    @field_validator("velocities")
    @classmethod
    def validate_velocities(cls, v):
        for item in v:
            if not abs(item) < 1.0:
                raise ValueError(f"velocity {item} outside (-1, 1)")
        return v

    @model_validator(mode="after")
    def resolve_defaults(self):
        dk = self.grid.dk
        half = (self.grid.n_modes - 1) // 2
        for p in self.momenta:
            tick = round(p / dk)
            if abs(tick) > half or abs(tick * dk - p) > 1e-9 * max(1.0, abs(p)):
                raise ValueError(f"momentum {p} is not a grid mode (dk={dk}, k_max={half * dk})")
        if self.packet_width is None:
            self.packet_width = 4.0 * dk
        return self


def _format_validation_error(exc: ValidationError) -> str:
    messages = []
    for err in exc.errors():
        path = ".".join(str(part) for part in err["loc"])
        if err["type"] == "missing":
            messages.append(f"missing required key '{path}'")
        elif err["type"] == "extra_forbidden":
            messages.append(f"unknown key '{path}'")
        else:
            msg = err["msg"].removeprefix("Value error, ")
            messages.append(f"{path}: {msg}" if path else msg)
    return "; ".join(messages)


def parse_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid config: {_format_validation_error(exc)}") from None


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return parse_config(data)


# ============================================================
# RESULT RECORDS
# ============================================================

class AlgebraResiduals(BaseModel):
    """Closure of the boost/energy/momentum commutator algebra."""
    r_NH: float = Field(ge=0, description="||[N,H] - iP||_F / ||P||_F")
    r_NP: float = Field(ge=0, description="||[N,P] - iH||_F / ||H||_F")
    r_HP: float = Field(ge=0, description="||[H,P]||_F")
    probe_r_NH: Optional[float] = Field(default=None, ge=0, description="Same residual on the smooth probe state")
    probe_r_NP: Optional[float] = Field(default=None, ge=0, description="Same residual on the smooth probe state")


class DecayFit(BaseModel):
    """Exponential-regime fit of a survival-type amplitude."""
    m_eff: float = Field(description="Phase slope (energy units)")
    gamma_rate: float = Field(ge=0, description="Decay width from the log |A|^2 slope")
    window: Tuple[float, float] = Field(description="Fit window [t1, t2]")
    r_squared: float = Field(ge=0, le=1)
    recurrence_guard: float = Field(gt=0, description="Latest admissible time")
    samples: int = Field(default=0, ge=0, description="Samples inside the window")

    @model_validator(mode="after")
    def validate_window(self):
        t1, t2 = self.window
        if not t1 < t2 <= self.recurrence_guard:
            raise ValueError(f"window {self.window} violates t1 < t2 <= {self.recurrence_guard}")
        return self


class CheckResult(BaseModel):
    value: Optional[float] = None
    tolerance: Optional[float] = None
    passed: bool


class ExperimentReport(BaseModel):
    """Self-contained record of one subcommand run."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    command: str
    config_echo: Dict[str, Any]
    residuals: Optional[AlgebraResiduals] = None
    lsq_converged: Optional[bool] = None
    lsq_iterations: Optional[int] = None
    sign_convention: Optional[str] = None
    results: Dict[str, Any] = Field(default_factory=dict)
    checks: Dict[str, CheckResult] = Field(default_factory=dict)
    versions: Dict[str, str] = Field(default_factory=dict)
    timing: Dict[str, float] = Field(default_factory=dict)
    series: List[Any] = Field(default_factory=list, exclude=True)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks.values())
