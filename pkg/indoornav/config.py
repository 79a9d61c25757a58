from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import tomli
from loguru import logger
from pydantic import BaseModel as PydanticBaseModel
from pydantic import Field, root_validator, validator
from rich.console import Console, ConsoleOptions, RenderResult
from rich.table import Column, Table

from .dirs import CONFIG_DIR
from .exceptions import ConfigError

CONFIG_FILE = CONFIG_DIR / "config.toml"


def load_toml_file(config_file: Path) -> Dict[str, Any]:
    """Load a TOML file and return the contents as a dict.

    Parameters
    ----------
    config_file : Path,
        Path to the TOML file to load.

    Returns
    -------
    Dict[str, Any]
        A TOML file as a dictionary
    """
    conf = tomli.loads(config_file.read_text())
    return conf


class BaseModel(PydanticBaseModel):
    """Base model shared by all config models."""

    @root_validator(pre=True)
    def _pre_root_validator(cls, values: dict) -> dict:
        """Checks for unknown fields and rejects them."""
        clsname = getattr(cls, "__name__", str(cls))
        for key in values:
            if key not in cls.__fields__:
                logger.warning(
                    "{}: Got unknown config key {!r}.",
                    clsname,
                    key,
                )
                raise ValueError(f"{clsname}: unknown config key {key!r}")
        return values

    def __rich_console__(
        self, console: Console, options: ConsoleOptions
    ) -> RenderResult:
        """Rich console representation of the model.

        Returns a table with the model's fields and values.

        If the model has a nested model, the nested model's table representation
        is printed after the main table.

        See: https://rich.readthedocs.io/en/latest/protocol.html#console-render
        """
        name = self.__class__.__name__
        table = Table(
            Column(
                header="Setting", justify="left", style="green", header_style="bold"
            ),
            Column(header="Value", style="blue", justify="left"),
            Column(header="Description", style="yellow", justify="left"),
            title=f"[bold]{name}[/bold]",
            title_style="magenta",
            title_justify="left",
        )
        subtables = []
        for field_name, field in self.__fields__.items():
            field_title = field.field_info.title or field_name

            attr = getattr(self, field_name)
            try:
                # issubclass is prone to TypeError, so we use try/except
                if issubclass(field.type_, BaseModel):
                    subtables.append(attr)
                    continue
            except TypeError:
                pass
            table.add_row(field_title, str(attr), field.field_info.description)

        if table.rows:
            yield table
        yield from subtables

    class Config:
        extra = "forbid"
        validate_assignment = True


def init_config_dir() -> None:
    """Create the config directory if it does not exist."""
    CONFIG_DIR.mkdir(parents=True, exist_ok=True)


class LogLevel(Enum):
    """Enum for log levels."""

    TRACE = "TRACE"
    DEBUG = "DEBUG"
    INFO = "INFO"
    SUCCESS = "SUCCESS"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"

    @classmethod
    def _missing_(cls, value: object) -> "LogLevel":
        """Convert string to enum value.

        Raises
        ------
        ValueError
            If the value is not a valid log level.
        """
        if not isinstance(value, str):
            raise TypeError(f"Expected str, got {type(value)}")
        for member in cls:
            if member.value == value.upper():
                return member
        raise ValueError(f"{value} is not a valid log level.")

    def __str__(self) -> str:
        """Return the enum value as a string."""
        return self.value


class ModelVariant(Enum):
    """Observation encoding of the navigation agent."""

    ONE_FRAME = "one-frame"
    FOUR_FRAME = "four-frame"
    RECURRENT = "lstm"

    def __str__(self) -> str:
        return self.value


class TargetMode(Enum):
    """How training targets are assigned to workers."""

    SPARSE = "sparse"
    DENSE = "dense"

    def __str__(self) -> str:
        return self.value


class FeatureMode(Enum):
    POOLED = "pooled"
    SPATIAL = "spatial"

    def __str__(self) -> str:
        return self.value


class LoggingSettings(BaseModel):
    enabled: bool = True
    console: bool = Field(True, description="Also log to stderr")
    structlog: bool = False
    level: LogLevel = LogLevel.INFO


class EnvConfig(BaseModel):
    """Rewards and episode limits of the navigation MDP."""

    goal_reward: float = Field(10.0, description="Reward for reaching the target")
    step_penalty: float = Field(0.01, ge=0, description="Penalty per non-goal step")
    train_max_steps: int = Field(500, ge=1, description="Training episode cap")
    eval_max_steps: int = Field(10_000, ge=1, description="Evaluation episode cap")
    eval_exploration: float = Field(
        0.05, ge=0, le=1, description="Chance of a random action in evaluation"
    )

    @validator("goal_reward")
    def _goal_reward_positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("goal_reward must be positive")
        return v

    @root_validator(skip_on_failure=True)
    def _caps_ordered(cls, values: dict) -> dict:
        if values["train_max_steps"] > values["eval_max_steps"]:
            raise ValueError("train_max_steps must not exceed eval_max_steps")
        return values


class ProcGenSettings(BaseModel):
    preset: str = Field("office", description="Scene category preset")
    rows: Optional[int] = Field(None, ge=2, description="Override preset rows")
    cols: Optional[int] = Field(None, ge=2, description="Override preset cols")
    obstacle_density: Optional[float] = Field(None, ge=0, lt=0.5)
    cell_size: float = Field(0.5, gt=0)
    pano_width: int = Field(512, ge=8)
    pano_height: int = Field(128, ge=8)
    samples_per_m2: float = Field(400.0, gt=0, description="Wall point density")
    floor_samples_per_m2: float = Field(1600.0, gt=0)
    seeds: List[int] = Field(default_factory=lambda: [1])
    mixed_corpus: bool = Field(
        False, description="Cycle presets in the 15/5/2/1/1 category mix"
    )

    @validator("pano_width")
    def _pano_width_divisible(cls, v: int) -> int:
        if v % 4:
            raise ValueError("pano_width must be divisible by 4")
        return v


class PipelineSettings(BaseModel):
    resolution: float = Field(0.05, gt=0, description="Map cell size (m)")
    z_min: float = Field(0.05, description="Robot height band bottom (m)")
    z_max: float = Field(0.60, description="Robot height band top (m)")
    min_points: int = Field(3, ge=1)
    sensor_height: float = Field(0.3, description="Laser-scan slab center (m)")
    slab_thickness: float = Field(0.1, gt=0)
    grid_size: float = Field(0.5, gt=0, description="Lattice spacing (m)")
    clearance: float = Field(0.18, ge=0, description="Robot radius (m)")

    @root_validator(skip_on_failure=True)
    def _band_ordered(cls, values: dict) -> dict:
        if values["z_min"] >= values["z_max"]:
            raise ValueError("z_min must be below z_max")
        return values


class PerceptionSettings(BaseModel):
    view_width: int = Field(84, ge=8)
    view_height: int = Field(84, ge=8)
    hfov: float = Field(90.0, gt=0, le=360)
    harris_k: float = 0.05
    harris_threshold: float = Field(
        1.0, description="Response threshold on the contrast-normalized image"
    )
    min_keypoints: int = Field(12, ge=1)
    feature_dim: int = Field(64, ge=1)
    feature_seed: int = 0
    feature_mode: FeatureMode = FeatureMode.POOLED


class NeuroSettings(BaseModel):
    gamma: float = Field(0.99, ge=0, le=1)
    beta_entropy: float = Field(0.01, ge=0)
    rollout_length: int = Field(5, ge=1)
    learning_rate: float = Field(7e-4, gt=0)
    rms_decay: float = Field(0.99, gt=0, lt=1)
    rms_epsilon: float = Field(0.1, gt=0)
    max_grad_norm: float = Field(40.0, gt=0)
    embed_dim: int = Field(512, ge=1)
    fusion_dim: int = Field(512, ge=1)
    head_dim: int = Field(512, ge=1)
    lstm_hidden: int = Field(64, ge=1)
    forget_bias: float = 1.0


class TrainSettings(BaseModel):
    scenes: List[Path] = Field(default_factory=list)
    variant: ModelVariant = ModelVariant.FOUR_FRAME
    target_mode: TargetMode = TargetMode.SPARSE
    dense_targets: Optional[int] = Field(
        None, ge=1, description="Cap on sampled dense targets (None = all)"
    )
    heldout_targets: int = Field(10, ge=0)
    workers: int = Field(8, ge=1)
    total_frames: int = Field(200_000, ge=0)
    finetune_frames: int = Field(100_000, ge=0)
    log_interval: int = Field(5_000, ge=1)
    strict: bool = Field(False, description="Serialize updates for reproducibility")
    unified_head: bool = Field(False, description="One head shared by all scenes")
    seed: int = 0


class EvalProtocol(BaseModel):
    """Fixed evaluation protocol, echoed in every report header."""

    episodes_per_target: int = Field(10, ge=1)
    max_steps: int = Field(10_000, ge=1)
    exploration: float = Field(0.05, ge=0, le=1)
    seed: int = 0


class DiagnoseSettings(BaseModel):
    per_class: int = Field(200, ge=1)
    test_per_class: int = Field(100, ge=1)
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    train_scenes: int = Field(15, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])


class ExperimentConfig(BaseModel):
    logging: LoggingSettings = Field(default_factory=LoggingSettings)
    env: EnvConfig = Field(default_factory=EnvConfig)
    procgen: ProcGenSettings = Field(default_factory=ProcGenSettings)
    pipeline: PipelineSettings = Field(default_factory=PipelineSettings)
    perception: PerceptionSettings = Field(default_factory=PerceptionSettings)
    neuro: NeuroSettings = Field(default_factory=NeuroSettings)
    train: TrainSettings = Field(default_factory=TrainSettings)
    eval: EvalProtocol = Field(default_factory=EvalProtocol)
    diagnose: DiagnoseSettings = Field(default_factory=DiagnoseSettings)
    config_file: Optional[Path] = None  # set by `from_file()` if loaded from file

    @classmethod
    def from_file(
        cls, config_file: Path = CONFIG_FILE, overrides: Optional[List[str]] = None
    ) -> "ExperimentConfig":
        """Create a Config object from a TOML file.

        Parameters
        ----------
        config_file : Path
            Path to the TOML file.
            If `None`, the default configuration file is used.
        overrides : Optional[List[str]]
            `section.key=value` strings applied on top of the file.

        Returns
        -------
        ExperimentConfig
            A Config object.
        """
        if not config_file.exists():
            raise FileNotFoundError(f"Config file {config_file} does not exist.")
        config = load_toml_file(config_file)
        apply_overrides(config, overrides or [])
        return cls(**config, config_file=config_file)  # type: ignore # mypy bug until Self type is supported

    @classmethod
    def from_overrides(cls, overrides: List[str]) -> "ExperimentConfig":
        config: Dict[str, Any] = {}
        apply_overrides(config, overrides)
        return cls(**config)

    def to_json(self) -> str:
        """Deterministic JSON echo of the effective configuration."""
        return self.json(indent=2, sort_keys=True, exclude={"config_file"})


def _parse_value(raw: str) -> Any:
    try:
        return tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        return raw


def apply_overrides(config: Dict[str, Any], overrides: List[str]) -> Dict[str, Any]:
    """Apply `a.b=value` overrides in place on a raw config dict.

    Values are parsed as TOML scalars/arrays; anything that does not parse
    is kept as a string.
    """
    for override in overrides:
        key, sep, raw = override.partition("=")
        if not sep or not key.strip():
            raise ConfigError(
                f"Override {override!r} is not of the form key=value", "bad-override"
            )
        *parents, leaf = key.strip().split(".")
        node = config
        for part in parents:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"{part!r} is not a config section", "bad-override")
            node = child
        node[leaf] = _parse_value(raw.strip())
        logger.debug("Config override {}={!r}", key, node[leaf])
    return config


def load_config(
    config_file: Optional[Path] = None, overrides: Optional[List[str]] = None
) -> ExperimentConfig:
    """Load the config file, falling back to defaults if there is none."""
    path = config_file or CONFIG_FILE
    if config_file is None and not path.exists():
        logger.debug("No config file at {}, using defaults", path)
        return ExperimentConfig.from_overrides(overrides or [])
    return ExperimentConfig.from_file(path, overrides)
