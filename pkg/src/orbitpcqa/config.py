"""Bundled run configuration: capture geometry, network, and training knobs.

Two built-in profiles share all code paths:

* ``paper``  - full-scale settings: 520x520 renders center-cropped to
  448x448, stage widths (64, 128, 256, 512) with two blocks per stage,
  50 epochs. Faithful but far too slow for a laptop CPU.
* ``desk``   - scaled-down settings for development and the test suite:
  64x64 renders cropped to 56x56, stage widths (8, 16, 32, 64) with one
  block per stage, 12 epochs.

Both keep the 210-frame orbit schedule and the stride-7, 30-frame clip
rule, batch size 4, and Adam at learning rate 1e-4.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .nn.network import NetworkConfig
from .orbit_camera import CaptureConfig

PROFILES = ("desk", "paper")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 50
    clip_stride: int = 7
    clip_length: int = 30

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size, and epochs must be positive")
        if self.clip_stride < 1 or self.clip_length < 1:
            raise ValueError("clip_stride and clip_length must be positive")


@dataclass(frozen=True)
class RunConfig:
    capture: CaptureConfig = field(default_factory=CaptureConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    @staticmethod
    def profile(name: str) -> "RunConfig":
        if name == "paper":
            return RunConfig(
                capture=CaptureConfig(),
                network=NetworkConfig(
                    stage_channels=(64, 128, 256, 512),
                    blocks_per_stage=(2, 2, 2, 2),
                ),
                training=TrainingConfig(epochs=50),
            )
        if name == "desk":
            return RunConfig(
                capture=CaptureConfig(
                    image_width=64, image_height=64, crop_width=56, crop_height=56
                ),
                network=NetworkConfig(),
                training=TrainingConfig(epochs=12),
            )
        raise ValueError(f"unknown profile {name!r}; choose from {PROFILES}")

    def to_dict(self) -> dict:
        def plain(obj):
            if isinstance(obj, tuple):
                return list(obj)
            return obj
        return {
            section: {k: plain(v) for k, v in asdict(cfg).items()}
            for section, cfg in (
                ("capture", self.capture),
                ("network", self.network),
                ("training", self.training),
            )
        }

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        def tup(d, key):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
        capture = dict(data.get("capture", {}))
        tup(capture, "background")
        network = dict(data.get("network", {}))
        for key in ("stage_channels", "blocks_per_stage",
                    "temporal_downsample", "spatial_downsample"):
            tup(network, key)
        training = dict(data.get("training", {}))
        return RunConfig(
            capture=CaptureConfig(**capture),
            network=NetworkConfig(**network),
            training=TrainingConfig(**training),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RunConfig":
        return RunConfig.from_dict(json.loads(text))


def load_run_config(profile: str | None, config_path: str | None) -> RunConfig:
    """Resolve CLI configuration: an explicit JSON file wins over a profile."""
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            return RunConfig.from_json(fh.read())
    return RunConfig.profile(profile or "desk")
