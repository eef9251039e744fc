"""Validated configuration and parameter models.

Every section of the pipeline config file maps onto one model here; unknown
keys are rejected, so a typo fails loudly instead of silently using a default.
"""

import configparser
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


def _split_csv(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


FloatList = Annotated[List[float], BeforeValidator(_split_csv)]
StrList = Annotated[List[str], BeforeValidator(_split_csv)]

# Modal frequencies of the first four wing modes (Hz)
DEFAULT_FREQUENCIES_HZ = [9.6, 38.2, 48.3, 91.5]
# One period of the 20.39 Hz frequency of interest resolved by 200 steps
DEFAULT_DT = 1.0 / (20.39 * 200)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RunConfig(StrictModel):
    seed: int = 0
    out_dir: str = "out"


class FomConfig(StrictModel):
    m: int = Field(4, ge=1, description="Structural mode count (n_s = 2m)")
    n_f: int = Field(64, ge=1, description="Interior fluid grid points")
    nu: float = Field(0.05, description="Viscosity")
    kappa_f: float = 0.1
    kappa_s: float = 0.1
    dt: float = Field(DEFAULT_DT, gt=0)
    steps: int = Field(1000, ge=1)
    seed: int = 0
    gvel_perturbation: float = 0.1
    frequencies_hz: FloatList = Field(default_factory=lambda: list(DEFAULT_FREQUENCIES_HZ))
    damping_ratios: Optional[FloatList] = None
    agard_like: bool = True

    @field_validator("nu")
    def validate_nu(cls, v):
        if v <= 0:
            raise ValueError("viscosity nu must be positive")
        return v

    @model_validator(mode="after")
    def validate_modes(self):
        if self.m > self.n_f:
            raise ValueError(f"mode count m={self.m} exceeds fluid points n_f={self.n_f}")
        if len(self.frequencies_hz) < self.m:
            raise ValueError(f"need {self.m} modal frequencies, got {len(self.frequencies_hz)}")
        if any(f <= 0 for f in self.frequencies_hz):
            raise ValueError("modal frequencies must be positive")
        if self.damping_ratios is not None:
            if len(self.damping_ratios) < self.m or any(z < 0 for z in self.damping_ratios):
                raise ValueError(f"need {self.m} nonnegative damping ratios")
        return self


class PreprocessConfig(StrictModel):
    enabled: bool = True
    groups: StrList = Field(default_factory=lambda: ["gdisp", "gvel", "u"])
    shift_mode: Literal["group", "row"] = "group"
    scale: bool = True
    allow_constant: bool = False


class PodConfig(StrictModel):
    structural_basis: Literal["identity", "pod"] = "identity"
    method: Literal["svd", "gram"] = "svd"
    r_s: Optional[int] = Field(None, ge=1)
    r_f: Optional[int] = Field(8, ge=1)
    energy_s: float = Field(0.9999, gt=0, le=1)
    energy_f: float = Field(0.9999, gt=0, le=1)


class RegWeights(StrictModel):
    """Grouped Tikhonov weights of the block problem."""

    s_linear: float = Field(0.0, ge=0)
    f_linear: float = Field(0.0, ge=0)
    f_quadratic: float = Field(0.0, ge=0)
    # Structural quadratic/bilinear blocks; only learned under non-AGARD masks.
    s_quadratic: float = Field(0.0, ge=0)

    def triple(self) -> Tuple[float, float, float]:
        return (self.s_linear, self.f_linear, self.f_quadratic)


class MonolithicRegWeights(StrictModel):
    constant: float = Field(0.0, ge=0)
    linear: float = Field(0.0, ge=0)
    quadratic: float = Field(0.0, ge=0)

    def triple(self) -> Tuple[float, float, float]:
        return (self.constant, self.linear, self.quadratic)


def weights_from_triple(method: str, triple) -> BaseModel:
    a, b, c = (float(x) for x in triple)
    if method == "block":
        return RegWeights(s_linear=a, f_linear=b, f_quadratic=c)
    if method == "monolithic":
        return MonolithicRegWeights(constant=a, linear=b, quadratic=c)
    raise ValueError(f"unknown inference method '{method}'")


class TrainConfig(StrictModel):
    methods: StrList = Field(default_factory=lambda: ["block", "monolithic"])
    k_train: int = Field(300, ge=7)
    mask: Literal["agard", "full", "linear"] = "agard"
    derivatives: Literal["fd", "exact"] = "fd"
    weights_from: Literal["config", "search"] = "search"
    s_linear: float = Field(1e-6, ge=0)
    f_linear: float = Field(1e-6, ge=0)
    f_quadratic: float = Field(1e-6, ge=0)
    s_quadratic: float = Field(0.0, ge=0)
    mono_constant: float = Field(1e-6, ge=0)
    mono_linear: float = Field(1e-6, ge=0)
    mono_quadratic: float = Field(1e-6, ge=0)

    @field_validator("methods")
    def validate_methods(cls, v):
        for method in v:
            if method not in ("block", "monolithic"):
                raise ValueError(f"unknown method '{method}' (expected block or monolithic)")
        return v

    def weights(self, method: str) -> BaseModel:
        if method == "block":
            return RegWeights(
                s_linear=self.s_linear,
                f_linear=self.f_linear,
                f_quadratic=self.f_quadratic,
                s_quadratic=self.s_quadratic,
            )
        return MonolithicRegWeights(
            constant=self.mono_constant, linear=self.mono_linear, quadratic=self.mono_quadratic
        )


class GridAxis(StrictModel):
    """One regularization axis: explicit `values`, or `count` points in [lo, hi]."""

    lo: float = Field(1e-6, ge=0)
    hi: float = Field(1e4, ge=0)
    count: int = Field(6, ge=1)
    spacing: Literal["log", "linear"] = "log"
    values: Optional[FloatList] = None

    @model_validator(mode="after")
    def validate_bounds(self):
        if self.values is not None:
            if not self.values or any(v < 0 for v in self.values):
                raise ValueError("explicit grid values must be a nonempty list of nonnegative numbers")
            return self
        if self.lo > self.hi or (self.lo == self.hi and self.count != 1):
            raise ValueError("grid axis needs lo < hi, or lo == hi with count 1")
        if self.spacing == "log" and self.lo <= 0:
            raise ValueError("logarithmic axis needs lo > 0")
        return self


class GridSpec(StrictModel):
    axes: Tuple[GridAxis, GridAxis, GridAxis] = (GridAxis(), GridAxis(), GridAxis())
    alpha: float = Field(10.0, gt=0)
    refine_decades: float = Field(1.0, gt=0)
    refine_count: Optional[int] = Field(None, ge=1)
    stages: int = Field(2, ge=1, le=2)
    objective: Literal["qoi", "state"] = "qoi"
    qois: StrList = Field(default_factory=lambda: ["lift", "gdisp_1", "gdisp_2"])
    time_budget: Optional[float] = Field(None, gt=0)


class RegsearchConfig(StrictModel):
    lo: float = Field(1e-6, gt=0)
    hi: float = Field(1e4, gt=0)
    count: int = Field(6, ge=1)
    refine_count: Optional[int] = Field(None, ge=1)
    refine_decades: float = Field(1.0, gt=0)
    stages: int = Field(2, ge=1, le=2)
    alpha: float = Field(10.0, gt=0)
    alpha_sweep: FloatList = Field(default_factory=list)
    objective: Literal["qoi", "state"] = "qoi"
    qois: StrList = Field(default_factory=lambda: ["lift", "gdisp_1", "gdisp_2"])
    time_budget: Optional[float] = Field(None, gt=0)

    def grid_spec(self, alpha: Optional[float] = None) -> GridSpec:
        axis = GridAxis(lo=self.lo, hi=self.hi, count=self.count, spacing="log")
        return GridSpec(
            axes=(axis, axis, axis),
            alpha=self.alpha if alpha is None else alpha,
            refine_decades=self.refine_decades,
            refine_count=self.refine_count,
            stages=self.stages,
            objective=self.objective,
            qois=self.qois,
            time_budget=self.time_budget,
        )


class PredictConfig(StrictModel):
    horizon: int = Field(1000, ge=1)
    gvel: Optional[FloatList] = None
    gdisp: Optional[FloatList] = None
    single_mode_cases: bool = False
    random_cases: int = Field(0, ge=0, description="Extra cases from random initial states seeded by [fom] seed")
    random_amplitude: float = Field(0.1, gt=0)
    export_slices: bool = True


class EvaluateConfig(StrictModel):
    qois: StrList = Field(default_factory=lambda: ["lift", "gdisp_1", "gdisp_2"])
    window_start: Optional[int] = Field(None, ge=0)
    window_stop: Optional[int] = Field(None, ge=1)


class CompareConfig(StrictModel):
    repetitions: int = Field(50, ge=1)
    evaluations: int = Field(200, ge=1)


class CountConfig(StrictModel):
    r_s: int = Field(8, ge=1)
    r_f_max: int = Field(32, ge=1)


class FlutterConstants(StrictModel):
    L: float = Field(1.833, gt=0, description="Characteristic length (ft)")
    L_nondim: float = Field(1.833, gt=0)
    f_char: float = Field(20.39, gt=0, description="Frequency of interest (Hz)")
    N: int = Field(200, gt=0, description="Timesteps per period")
    gamma: float = Field(1.4, gt=0, description="Specific heat ratio")
    R: float = Field(1716.49, gt=0, description="Specific gas constant (ft·lbf/slug·°R)")
    C: float = Field(198.6, gt=0, description="Sutherland constant (°R)")
    T_ref: float = Field(518.69, gt=0, description="Reference temperature (°R)")
    mu_ref: float = Field(3.737e-7, gt=0, description="Reference viscosity (slug/ft·s)")


class FlowCondition(BaseModel):
    model_config = ConfigDict(frozen=True)

    M_inf: float
    q_inf: float
    rho: float
    u_inf: float
    a: float
    T: float
    mu: float
    Re: float
    Re_L: float
    dt_dim: float
    dt_nondim: float


class PipelineConfig(StrictModel):
    run: RunConfig = RunConfig()
    fom: FomConfig = FomConfig()
    preprocess: PreprocessConfig = PreprocessConfig()
    pod: PodConfig = PodConfig()
    train: TrainConfig = TrainConfig()
    regsearch: RegsearchConfig = RegsearchConfig()
    predict: PredictConfig = PredictConfig()
    evaluate: EvaluateConfig = EvaluateConfig()
    compare: CompareConfig = CompareConfig()
    count: CountConfig = CountConfig()
    flutter: FlutterConstants = FlutterConstants()

    @model_validator(mode="after")
    def validate_windows(self):
        if self.train.k_train > self.fom.steps:
            raise ValueError(f"k_train={self.train.k_train} exceeds simulated steps={self.fom.steps}")
        if self.predict.horizon > self.fom.steps:
            raise ValueError(f"prediction horizon {self.predict.horizon} exceeds simulated steps {self.fom.steps}")
        return self


def _format_validation_error(exc: ValidationError) -> str:
    problems = []
    for err in exc.errors():
        location = ".".join(str(part) for part in err["loc"])
        if err["type"] == "extra_forbidden":
            problems.append(f"unknown key '{location}'")
        else:
            problems.append(f"{location}: {err['msg']}")
    return "; ".join(problems)


def parse_config_text(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}")
    raw = {section: dict(parser.items(section)) for section in parser.sections()}
    try:
        return PipelineConfig(**raw)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e))


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())
