"""Run configuration: one dataclass covering data, model, and optimisation.

A config comes from defaults, optionally a JSON file, then explicit
overrides, in that order. `validate` reports every violation at once.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError

ARCH_FIELDS = ("height", "width", "channels", "patch", "embed_dim", "depth",
               "heads", "feat_channels", "se_reduction", "no_boundary",
               "no_transformer", "no_ctx_attention")


@dataclass
class TrainConfig:
    # data: a dataset directory (images/, masks/, split.json), or None to
    # generate synthetic data in memory from the `synthetic` overrides
    data_dir: str | None = None
    synthetic: dict | None = None
    out_dir: str = "runs/default"

    height: int = 64
    width: int = 64
    channels: int = 1
    patch: int = 8

    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    feat_channels: int = 32
    se_reduction: int = 4

    lambda_seg: float = 1.0
    lambda_boundary: float = 1.0
    lambda_ric: float = 1.0

    # 5e-4 suits the short schedules used here; schedules an order of
    # magnitude longer pair better with 1e-4
    lr: float = 5e-4
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0

    no_boundary: bool = False
    no_transformer: bool = False
    no_ctx_attention: bool = False

    def validate(self) -> None:
        problems = []
        if self.height < 8 or self.width < 8 or self.height % 8 or self.width % 8:
            problems.append(
                f"input extents must be positive multiples of 8, got {self.height}x{self.width}")
        if self.patch < 4 or self.patch % 4:
            problems.append(f"patch must be a positive multiple of 4, got {self.patch}")
        elif self.height % self.patch or self.width % self.patch:
            problems.append(f"patch {self.patch} must divide {self.height}x{self.width}")
        if self.channels not in (1, 3):
            problems.append(f"channels must be 1 or 3, got {self.channels}")
        if self.embed_dim < 1 or self.heads < 1 or self.embed_dim % self.heads:
            problems.append(
                f"embedding dim {self.embed_dim} must divide by heads {self.heads}")
        if self.depth < 1:
            problems.append(f"depth must be >= 1, got {self.depth}")
        if self.feat_channels < 4 or self.feat_channels % 4:
            problems.append(
                f"feature width must be a positive multiple of 4, got {self.feat_channels}")
        elif self.se_reduction < 1 or self.feat_channels % self.se_reduction:
            problems.append(
                f"reduction {self.se_reduction} must divide feature width {self.feat_channels}")
        if min(self.lambda_seg, self.lambda_boundary, self.lambda_ric) < 0.0:
            problems.append("loss weights must be >= 0")
        if self.lambda_seg == self.lambda_boundary == self.lambda_ric == 0.0:
            problems.append("at least one loss weight must be positive")
        if self.lr <= 0.0:
            problems.append(f"learning rate must be > 0, got {self.lr}")
        if self.batch_size < 1:
            problems.append(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            problems.append(f"epochs must be >= 0, got {self.epochs}")
        if self.data_dir is not None and self.synthetic is not None:
            problems.append("give either data_dir or synthetic overrides, not both")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(values: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return TrainConfig(**values)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> TrainConfig:
    """Defaults, then the JSON file, then explicit overrides."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
        values.update(loaded)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    cfg = config_from_dict(values)
    cfg.validate()
    return cfg
