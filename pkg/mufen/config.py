"""Pipeline configuration: nested dataclasses loaded from JSON with strict keys."""

import dataclasses
import json
import logging
from dataclasses import dataclass, field

from .diffusion import TrainConfig
from .encoders import EncoderConfig
from .errors import ConfigError
from .fusion import MODALITIES, MufenConfig
from .geometry import CameraPose
from .render import MIN_RESOLUTION
from .viewselect import SELECTION_MODES

logger = logging.getLogger(__name__)


@dataclass
class FormatFlags:
    plot: bool = False


@dataclass
class DatasetConfig:
    n: int = 64
    resolution: int = 64
    left_fraction: float = 0.5
    manifest: str = None

    def validate(self):
        violations = []
        if self.n < 1:
            violations.append(f"dataset.n must be >= 1, got {self.n}")
        if self.resolution < 64 or self.resolution % 16:
            violations.append(f"dataset.resolution must be >= 64 and a multiple of 16, got {self.resolution}")
        if not 0.0 <= self.left_fraction <= 1.0:
            violations.append(f"dataset.left_fraction must lie in [0, 1], got {self.left_fraction}")
        return violations


@dataclass
class ModelConfig:
    fused_channels: int = 64
    modalities: tuple = MODALITIES
    use_bbox_fusion: bool = True
    out_size: int = 225
    view_set: str = None


# JSON spellings that differ from the attribute names
_ALIASES = {TrainConfig: {"lambda": "lam"}}


def _build(cls, data, path):
    """Instantiate dataclass `cls` from a dict, rejecting unknown keys by dotted path"""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"'{path}' must be an object, got {type(data).__name__}")
    aliases = _ALIASES.get(cls, {})
    names = {f.name for f in dataclasses.fields(cls)}
    presets = getattr(cls, "PRESETS", None)
    kwargs = {}
    if "preset" in data:
        if presets is None or data["preset"] not in presets:
            raise ConfigError(f"'{path}.preset': unknown preset {data['preset']!r}")
        kwargs.update(presets[data["preset"]])
    for key, value in data.items():
        if key == "preset":
            continue
        name = aliases.get(key, key)
        if name not in names:
            raise ConfigError(f"unknown configuration key '{path}.{key}'")
        kwargs[name] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"'{path}': {exc}") from exc


@dataclass
class PipelineConfig:
    seed: int = 0
    selection_resolution: int = None
    selection: str = "pair_sum"
    output_dir: str = "out"
    camera: CameraPose = field(default_factory=CameraPose)
    formats: FormatFlags = field(default_factory=FormatFlags)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    SECTIONS = {
        "formats": FormatFlags,
        "encoder": EncoderConfig,
        "model": ModelConfig,
        "train": TrainConfig,
        "dataset": DatasetConfig,
    }

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("configuration document must be a JSON object")
        kwargs = {}
        scalars = {"seed", "selection_resolution", "selection", "output_dir"}
        for key, value in data.items():
            if key in cls.SECTIONS:
                kwargs[key] = _build(cls.SECTIONS[key], value, key)
            elif key == "camera":
                try:
                    kwargs[key] = CameraPose.from_dict(value)
                except ValueError as exc:
                    raise ConfigError(f"'camera': {exc}") from exc
            elif key in scalars:
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown configuration key '{key}'")
        config = cls(**kwargs)
        if "seed" not in (data.get("train") or {}):
            config.train = dataclasses.replace(config.train, seed=config.seed)
        return config.ensure_valid()

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        logger.info("loaded configuration from %s", path)
        return cls.from_dict(data)

    def mufen_config(self):
        return MufenConfig(
            encoder=self.encoder,
            fused_channels=self.model.fused_channels,
            modalities=self.model.modalities,
            use_bbox_fusion=self.model.use_bbox_fusion,
            out_size=self.model.out_size,
            view_set=self.model.view_set,
        )

    def validate(self):
        violations = []
        if not isinstance(self.seed, int) or self.seed < 0:
            violations.append(f"seed must be a non-negative integer, got {self.seed!r}")
        value = self.selection_resolution
        if value is not None and (not isinstance(value, int) or value < MIN_RESOLUTION):
            violations.append(f"selection_resolution must be an integer >= {MIN_RESOLUTION}, got {value!r}")
        if self.selection not in SELECTION_MODES:
            violations.append(f"selection must be one of {SELECTION_MODES}, got {self.selection!r}")
        violations.extend(f"model: {v}" for v in self.mufen_config().validate())
        violations.extend(f"train: {v}" for v in self.train.validate())
        violations.extend(self.dataset.validate())
        if self.model.view_set and self.dataset.manifest:
            violations.append("model.view_set needs a synthesized dataset; manifests carry only the selected pair")
        return violations

    def ensure_valid(self):
        violations = self.validate()
        if violations:
            raise ConfigError("; ".join(violations))
        return self
