"""
Network, training and data settings.

A run is configured from a preset (`desk` or `full`), optionally overridden
by a line-oriented file:

    # comments start with '#'
    net.level_points = 128,64,32,16
    train.batch_size = 4
    data.remove_ground = false

and finally by ablation switches.
"""

import os
import typing
from pathlib import Path
from typing import Literal

from pydantic import ValidationError, field_validator, model_validator

from app.core.errors import ConfigError
from app.core.util import content_hash
from app.models.base import Base

FourInts = tuple[int, int, int, int]


class NetConfig(Base):
    n_points: int = 8192
    level_points: FourInts = (2048, 1024, 256, 64)
    level_channels: FourInts = (32, 64, 128, 256)
    pyramid_k: int = 16
    cost_k1: int = 16
    cost_k2: int = 16
    cost_hidden: int = 64
    embedding_channels: int = 64
    upconv_k: int = 8
    mask_hidden: int = 64
    fc_hidden: tuple[int, int] = (256, 128)
    first_embedding: Literal["penultimate", "last"] = "penultimate"
    mask_enabled: bool = True
    mask_optimization: bool = True
    warp_enabled: bool = True
    refinement_enabled: bool = True
    cost_volume: Literal["attentive", "uniform"] = "attentive"
    fps_random_start: bool = False

    @field_validator("n_points", "pyramid_k", "cost_k1", "cost_k2", "cost_hidden",
                     "embedding_channels", "upconv_k", "mask_hidden")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("level_channels", "fc_hidden")
    @classmethod
    def _positive_widths(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if any(w < 1 for w in v):
            raise ValueError("widths must be >= 1")
        return v

    @model_validator(mode="after")
    def _check_levels(self) -> "NetConfig":
        n = (self.n_points, *self.level_points)
        if not all(a > b for a, b in zip(n[1:], n[2:])) or self.level_points[-1] < 1:
            raise ValueError(f"level_points must strictly decrease to >= 1, got {self.level_points}")
        if self.level_points[0] > self.n_points:
            raise ValueError("level_points[0] cannot exceed n_points")
        if self.pyramid_k > self.level_points[2]:
            raise ValueError(f"pyramid_k={self.pyramid_k} exceeds the level-3 size {self.level_points[2]}")
        first = self.level_points[self.first_level - 1]
        if max(self.cost_k1, self.cost_k2) > first:
            raise ValueError(f"cost volume k exceeds the first embedding level size {first}")
        if self.upconv_k > self.level_points[-1]:
            raise ValueError(f"upconv_k={self.upconv_k} exceeds the coarsest level size")
        return self

    @property
    def first_level(self) -> int:
        """Pyramid level (1 finest, 4 coarsest) where the first cost volume runs."""
        return 3 if self.first_embedding == "penultimate" else 4

    @property
    def mask_mode(self) -> str:
        if not self.mask_enabled:
            return "off"
        return "hierarchical" if self.mask_optimization else "independent"

    @property
    def num_outputs(self) -> int:
        return 4 if self.refinement_enabled else 1


class TrainConfig(Base):
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_steps: int = 200_000
    decay_rate: float = 0.7
    lr_floor: float = 1e-5
    s_x: float = 0.0
    s_q: float = -2.5
    alphas: tuple[float, float, float, float] = (1.6, 0.8, 0.4, 0.2)
    finest_first: bool = True
    steps: int = 1000
    checkpoint_every: int = 100
    seed: int = 0
    workers: int = 1

    @field_validator("batch_size", "decay_steps", "checkpoint_every", "workers")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("steps")
    @classmethod
    def _non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("alphas")
    @classmethod
    def _positive_alphas(cls, v):
        if any(a <= 0 for a in v):
            raise ValueError("alphas must be positive")
        return tuple(float(a) for a in v)

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if not 0 < self.lr_floor <= self.learning_rate:
            raise ValueError("need 0 < lr_floor <= learning_rate")
        if not 0 < self.decay_rate <= 1:
            raise ValueError("decay_rate must be in (0, 1]")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ValueError("invalid Adam constants")
        return self


class DataConfig(Base):
    augment: bool = False
    sigma_rot_deg: float = 2.0
    sigma_trans: float = 0.1
    crop_half_width: float = 15.0
    sensor_height: float = 1.73
    ground_threshold: float = 0.55
    remove_ground: bool = True
    split: Literal["standard", "lodonet", "deeppco", "unsupervised"] = "standard"

    @field_validator("sigma_rot_deg", "sigma_trans", "crop_half_width")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("must be >= 0")
        return v


class RunConfig(Base):
    net: NetConfig = NetConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()


SECTIONS: dict[str, type[Base]] = {"net": NetConfig, "train": TrainConfig, "data": DataConfig}

PRESETS: dict[str, dict[str, dict]] = {
    "full": {
        "net": {"fps_random_start": True},
        "data": {"augment": True},
    },
    "desk": {
        "net": {
            "n_points": 512,
            "level_points": (128, 64, 32, 16),
            "level_channels": (8, 16, 32, 64),
            "pyramid_k": 8,
            "cost_k1": 4,
            "cost_k2": 4,
            "cost_hidden": 16,
            "embedding_channels": 16,
            "upconv_k": 4,
            "mask_hidden": 16,
            "fc_hidden": (64, 32),
            "fps_random_start": True,
        },
    },
}

ABLATIONS: dict[str, tuple[dict, str]] = {
    "no-mask": ({"mask_enabled": False}, "embedding mask off: pose head average-pools the embeddings"),
    "no-mask-opt": ({"mask_optimization": False}, "mask regenerated per level without the coarse mask prior"),
    "no-warp": ({"warp_enabled": False}, "refinement re-associates PC1 without warping it"),
    "no-refine": ({"refinement_enabled": False}, "single pose from the initial level, no refinement"),
    "uniform-cv": ({"cost_volume": "uniform"}, "cost volume weights every neighbour equally"),
    "first-embed-last": ({"first_embedding": "last"}, "first cost volume on the coarsest level"),
}


def _validate(model: type[Base], data: dict, section: str):
    try:
        return model.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        key = ".".join(str(p) for p in err["loc"]) or "(model)"
        raise ConfigError(f"invalid {section} setting {section}.{key}: {err['msg']}") from None


def preset(name: str) -> RunConfig:
    try:
        overrides = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset '{name}' (choose from {', '.join(PRESETS)})") from None
    return update(RunConfig(), overrides)


def update(run: RunConfig, overrides: dict[str, dict]) -> RunConfig:
    sections = {}
    for section, model in SECTIONS.items():
        current = getattr(run, section).model_dump()
        sections[section] = _validate(model, {**current, **overrides.get(section, {})}, section)
    return RunConfig(**sections)


def _is_tuple(model: type[Base], key: str) -> bool:
    ann = model.model_fields[key].annotation
    if typing.get_origin(ann) is tuple:
        return True
    return any(typing.get_origin(a) is tuple for a in typing.get_args(ann))


def _parse_value(model: type[Base], key: str, raw: str):
    if _is_tuple(model, key):
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    return raw


def parse_config_text(text: str, base: RunConfig) -> RunConfig:
    overrides: dict[str, dict] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        section, _, name = key.partition(".")
        model = SECTIONS.get(section)
        if model is None or name not in model.model_fields:
            raise ConfigError(f"unknown config key '{key}'")
        overrides.setdefault(section, {})[name] = _parse_value(model, name, raw)
    return update(base, overrides)


def load_config_file(path: str | os.PathLike, base: RunConfig) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return parse_config_text(text, base)


def apply_ablations(run: RunConfig, names: list[str]) -> RunConfig:
    net = {}
    for name in names:
        try:
            net.update(ABLATIONS[name][0])
        except KeyError:
            raise ConfigError(f"unknown ablation '{name}' (choose from {', '.join(ABLATIONS)})") from None
    return update(run, {"net": net})


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_text(run: RunConfig) -> str:
    """Canonical `section.key = value` rendering; parsing it gives `run` back."""
    lines = []
    for section in SECTIONS:
        for key, value in getattr(run, section).model_dump().items():
            lines.append(f"{section}.{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def config_hash(run: RunConfig) -> str:
    return content_hash(config_text(run).encode("utf-8"))


def describe(net: NetConfig) -> list[str]:
    """Human-readable summary of the switches that differ from the full model."""
    lines = [
        f"points {net.n_points}, levels {'/'.join(map(str, net.level_points))}, "
        f"channels {'/'.join(map(str, net.level_channels))}",
        f"first embedding on the {net.first_embedding} level, cost volume {net.cost_volume}",
    ]
    for name, (flags, text) in ABLATIONS.items():
        if all(getattr(net, k) == v for k, v in flags.items()):
            lines.append(f"ablation {name}: {text}")
    return lines
