"""Run configuration: dataclasses, JSON loading with strict key checking,
and the default/toy presets."""

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .hoi_data import DataConfig


@dataclass
class ModelConfig:
    width: int = 256
    heads: int = 4
    encoder_layers: int = 8
    decoder_layers: int = 8
    contact_tokens: int = 8
    aggregator_layers: int = 1
    aggregate_per_layer: bool = False
    him_fusion: str = "per_layer"  # or "final"
    decoupled: bool = True
    use_contacts: bool = True
    use_him: bool = True

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.him_fusion not in ("per_layer", "final"):
            raise ConfigError(f"unknown him_fusion '{self.him_fusion}'")
        if self.use_him and not self.decoupled:
            raise ConfigError("use_him requires decoupled branches")
        if self.use_contacts and not self.decoupled:
            raise ConfigError("contact channels require decoupled branches")


@dataclass
class DiffusionConfig:
    steps: int = 100
    kind: str = "cosine"
    noise_past_frames: bool = True

    def __post_init__(self):
        if self.steps < 2:
            raise ConfigError(f"diffusion steps must be >= 2, got {self.steps}")


@dataclass
class StageConfig:
    steps: int
    learning_rate: float = 1e-4

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"stage steps must be >= 0, got {self.steps}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")


@dataclass
class TrainingConfig:
    stage1: StageConfig = field(default_factory=lambda: StageConfig(2000))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(500))
    stage3: StageConfig = field(default_factory=lambda: StageConfig(500))
    batch_size: int = 8
    lambda_human: float = 1.0
    lambda_object: float = 1.0
    lambda_consistency: float = 0.5
    grad_clip: float = 1.0

    def __post_init__(self):
        for name in ("lambda_human", "lambda_object", "lambda_consistency"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)


_SECTION_TYPES = {"data": DataConfig, "model": ModelConfig,
                  "diffusion": DiffusionConfig, "training": TrainingConfig}


def _build_dataclass(cls, values, context):
    if not isinstance(values, dict):
        raise ConfigError(f"{context}: expected an object, got {type(values).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(names)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, val in values.items():
        f = names[key]
        if f.type == "StageConfig" or f.type is StageConfig:
            val = _build_dataclass(StageConfig, val, f"{context}.{key}")
        elif key == "contact_window":
            val = tuple(val)
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from None


def config_from_dict(values: dict) -> RunConfig:
    if not isinstance(values, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(values) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"config: unknown sections {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        if name in values:
            sections[name] = _build_dataclass(cls, values[name], name)
    return RunConfig(**sections)


def config_to_dict(config: RunConfig) -> dict:
    out = dataclasses.asdict(config)
    out["data"]["contact_window"] = list(out["data"]["contact_window"])
    return out


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(values)


def save_config(config: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2)
        fh.write("\n")


def toy_config() -> RunConfig:
    """Desk-scale preset used by the tests and the ablation command."""
    return RunConfig(
        data=DataConfig(joints=5, past_len=10, future_len=6, surface_points=32,
                        subset_size=2, keyframe_spacing=5, grasp_radius=0.3),
        model=ModelConfig(width=32, heads=2, encoder_layers=2, decoder_layers=2,
                          contact_tokens=4),
        diffusion=DiffusionConfig(steps=60, kind="cosine"),
        training=TrainingConfig(
            stage1=StageConfig(1000, 1e-3),
            stage2=StageConfig(300, 1e-3),
            stage3=StageConfig(150, 1e-4),
            batch_size=8),
    )
