"""Run configuration: a strict hierarchical key-value document.

Unknown keys are rejected, every field has a documented default, and the
fully-resolved document is serialized into each output directory so runs can
be reproduced from their artifacts alone.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class GeometryConfig:
    """Synthetic pinhole camera (pixels)."""

    fx: float = 64.0
    fy: float = 64.0
    cx: float = 32.0
    cy: float = 32.0
    width: int = 64
    height: int = 64
    z_near: float = 1e-6


@dataclass
class CodecConfig:
    """Latent geometry: patch size, channel widths and grid shape.

    The frame/video codec is exactly invertible when its channel count equals
    3 * patch^2 (the default); smaller widths are accepted but then decoding
    is a best-effort projection.
    """

    patch: int = 4
    c_frame: int = 48
    c_video: int = 48
    c_point: int = 64
    h: int = 16
    w: int = 16
    k: int = 13
    enc_hidden: int = 8  # motion/camera conv stack width
    adapter_hidden: int = 16  # point-map adapter conv width


@dataclass
class DiffusionConfig:
    """Noise schedule, sampler and denoiser architecture."""

    steps: int = 50
    cfg: float = 7.5
    p_drop: float = 0.1
    seed: int = 0
    depth: int = 6
    width: int = 128
    heads: int = 4
    patch_k: int = 1
    patch_h: int = 4
    patch_w: int = 4
    mlp_ratio: int = 4


@dataclass
class TrainerConfig:
    """Two-stage training parameters (shared by both stages)."""

    lr: float = 2e-3
    steps: int = 500
    batch: int = 4
    lora_rank: int = 4
    lora_alpha: float = 4.0
    last_n_blocks: int = 2
    log_every: int = 25
    eval_t_points: int = 8  # deterministic eval-loss grid size


@dataclass
class DatapipeConfig:
    """Synthetic corpus generation and filtering."""

    num_samples: int = 16
    frames: int = 13
    styles: tuple = ("idle", "walk", "crouch", "wave")
    noise_px_min: float = 0.2
    noise_px_max: float = 1.0
    filter_fraction: float = 0.1
    shell_points: int = 131072
    prim_points: int = 8192


@dataclass
class RunConfig:
    seed: int = 0
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    datapipe: DatapipeConfig = field(default_factory=DatapipeConfig)


_SECTIONS = {
    "geometry": GeometryConfig,
    "codec": CodecConfig,
    "diffusion": DiffusionConfig,
    "trainer": TrainerConfig,
    "datapipe": DatapipeConfig,
}


def _fill(cls, doc: dict, path: str):
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        if key not in names:
            raise ConfigError(f"unknown config key {path}{key!r}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad config section {path!r}: {e}") from e


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    kwargs = {}
    for key, value in doc.items():
        if key == "seed":
            if not isinstance(value, int):
                raise ConfigError("config key 'seed' must be an integer")
            kwargs["seed"] = value
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            kwargs[key] = _fill(_SECTIONS[key], value, f"{key}.")
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return RunConfig(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["datapipe"]["styles"] = list(doc["datapipe"]["styles"])
    return doc


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return config_from_dict(doc)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
