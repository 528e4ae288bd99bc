import os
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

DEFAULT_COEFFICIENTS = {"alpha": -1.0, "delta": 5.0, "gamma": 1.0, "xi": 1.0}
TRIM_BOUND = 0.01
SMALL_SAMPLE_FOLDS = 2
SMALL_SAMPLE_LIMIT = 500


class Setting(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    DIRECT = "DIRECT"

    @property
    def radius_constant(self) -> float:
        return 5.0 if self is Setting.DIRECT else 30.0


class Command(str, Enum):
    SIMULATE = "simulate"
    TEST_VALIDITY = "test-validity"
    ESTIMATE_DIRECT = "estimate-direct"
    ANALYZE = "analyze"
    REPRODUCE_TABLE1 = "reproduce-table1"
    REPRODUCE_TABLE2 = "reproduce-table2"


def default_workers() -> int:
    return int(os.environ.get("EXPOSURE_LAB_WORKERS", "1"))


def default_output_dir() -> Path:
    return Path(os.environ.get("EXPOSURE_LAB_OUTPUT_DIR", "results"))


class SimConfig(BaseModel):
    n: int = Field(ge=1)
    setting: Setting = Setting.S1
    alpha: float = DEFAULT_COEFFICIENTS["alpha"]
    delta: float = DEFAULT_COEFFICIENTS["delta"]
    gamma: float = DEFAULT_COEFFICIENTS["gamma"]
    xi: float = DEFAULT_COEFFICIENTS["xi"]
    radius_constant: Optional[float] = Field(default=None, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def bind_radius_to_setting(self) -> "SimConfig":
        if self.radius_constant is None:
            self.radius_constant = self.setting.radius_constant
        return self

    @classmethod
    def for_setting(cls, setting: Union[Setting, str], n: int, seed: int = 0,
                    **overrides) -> "SimConfig":
        return cls(n=n, setting=Setting(setting), seed=seed, **overrides)


class GcaConfig(BaseModel):
    encoder_layer_dims: List[int] = Field(default_factory=lambda: [16, 1])
    learning_rate: float = Field(default=0.01, gt=0)
    epochs: int = Field(default=200, ge=1)
    hidden_activation: str = "relu"
    optimizer: str = "adam"
    seed: int = 0

    @field_validator("encoder_layer_dims")
    @classmethod
    def force_scalar_embedding(cls, dims: List[int]) -> List[int]:
        if not dims:
            return [1]
        if any(d < 1 for d in dims):
            raise ValueError(f"layer widths must be positive, got {dims}")
        return dims if dims[-1] == 1 else [*dims, 1]

    @field_validator("hidden_activation")
    @classmethod
    def known_activation(cls, name: str) -> str:
        if name not in ("relu", "identity"):
            raise ValueError(f"unknown activation {name!r}")
        return name

    @field_validator("optimizer")
    @classmethod
    def known_optimizer(cls, name: str) -> str:
        if name not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {name!r}")
        return name

    @classmethod
    def with_hidden_width(cls, width: int, **kwargs) -> "GcaConfig":
        return cls(encoder_layer_dims=[width, 1], **kwargs)


class NuisanceConfig(BaseModel):
    folds: Optional[int] = Field(default=None, ge=2)
    trim: float = Field(default=TRIM_BOUND, gt=0, lt=0.5)
    newton_max_iter: int = Field(default=100, ge=1)
    newton_tol: float = Field(default=1e-8, gt=0)
    aggregation: str = "dml2"
    # ratio-form weights for the effect estimators
    normalize: bool = True
    # treatment redraws behind the propensity of a binarised learned exposure
    design_draws: int = Field(default=2000, ge=1)

    @field_validator("aggregation")
    @classmethod
    def known_aggregation(cls, name: str) -> str:
        if name not in ("dml2", "dml1"):
            raise ValueError(f"unknown aggregation {name!r}")
        return name

    def resolve_folds(self, n: int) -> int:
        if self.folds is not None:
            return self.folds
        return SMALL_SAMPLE_FOLDS if n <= SMALL_SAMPLE_LIMIT else 5


class RunSpec(BaseModel):
    command: Command
    settings: List[Setting] = Field(default_factory=lambda: [Setting.S1])
    n_list: List[int] = Field(default_factory=lambda: [500])
    reps: int = Field(default=1, ge=1)
    base_seed: int = 2024
    output_path: Path = Field(default_factory=default_output_dir)
    L: int = Field(default=4, ge=2)
    method: str = "ipw"
    workers: int = Field(default_factory=default_workers, ge=1)
    check: bool = False
    gca: GcaConfig = Field(default_factory=GcaConfig)
    nuisance: NuisanceConfig = Field(default_factory=NuisanceConfig)
    export_graph: Optional[Path] = None
    export_data: Optional[Path] = None

    @field_validator("n_list")
    @classmethod
    def nonempty_sizes(cls, sizes: List[int]) -> List[int]:
        if not sizes:
            raise ValueError("n_list must not be empty")
        if any(n < 1 for n in sizes):
            raise ValueError(f"sample sizes must be positive, got {sizes}")
        return sizes

    @field_validator("method")
    @classmethod
    def known_method(cls, name: str) -> str:
        if name not in ("ipw", "dr"):
            raise ValueError(f"unknown method {name!r}")
        return name


# config-file keys that map onto nested models
_GCA_KEYS = {"hidden_width", "lr", "epochs", "optimizer", "activation"}
_NUISANCE_KEYS = {"folds", "aggregation", "trim"}
_TOP_KEYS = {"command", "setting", "n", "reps", "seed", "l", "out", "workers", "check",
             "method", "export_graph", "export_data", "log_level"}


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_").lower()
        if key not in _GCA_KEYS | _NUISANCE_KEYS | _TOP_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = value
    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return parse_config_text(text)


def _split_list(value) -> List[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [part.strip() for part in str(value).split(",") if part.strip()]


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def build_run_spec(values: Dict[str, object]) -> RunSpec:
    """Build a RunSpec from flat flag-style keys (config file and CLI share the names)."""
    values = {k: v for k, v in values.items() if v is not None}
    gca = {}
    if "hidden_width" in values:
        gca["encoder_layer_dims"] = [int(values["hidden_width"]), 1]
    if "lr" in values:
        gca["learning_rate"] = float(values["lr"])
    if "epochs" in values:
        gca["epochs"] = int(values["epochs"])
    if "optimizer" in values:
        gca["optimizer"] = values["optimizer"]
    if "activation" in values:
        gca["hidden_activation"] = values["activation"]
    nuisance = {}
    if "folds" in values:
        nuisance["folds"] = int(values["folds"])
    if "aggregation" in values:
        nuisance["aggregation"] = values["aggregation"]
    if "trim" in values:
        nuisance["trim"] = float(values["trim"])
    spec = {"gca": gca, "nuisance": nuisance}
    if "command" in values:
        spec["command"] = values["command"]
    if "setting" in values:
        spec["settings"] = [s.upper() for s in _split_list(values["setting"])]
    if "n" in values:
        spec["n_list"] = [int(v) for v in _split_list(values["n"])]
    if "reps" in values:
        spec["reps"] = int(values["reps"])
    if "seed" in values:
        spec["base_seed"] = int(values["seed"])
    if "l" in values:
        spec["L"] = int(values["l"])
    if "out" in values:
        spec["output_path"] = Path(str(values["out"]))
    if "workers" in values:
        spec["workers"] = int(values["workers"])
    if "check" in values:
        spec["check"] = _as_bool(values["check"])
    if "method" in values:
        spec["method"] = values["method"]
    for key in ("export_graph", "export_data"):
        if key in values:
            spec[key] = Path(str(values[key]))
    try:
        return RunSpec(**spec)
    except (ValidationError, ValueError) as e:
        raise ConfigError(str(e)) from e
