"""Run configuration dataclasses and the sectioned ``key = value`` config file."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from typing import Any


@dataclass
class GeneratorConfig:
    depth: int = 5
    base_channels: int = 16
    input_size: int = 64
    norm_plan: str = "RAIN-Decoder"
    attention_blocks: int = 3
    in_channels: int = 4  # RGB composite + mask
    out_channels: int = 3
    eps: float = 1e-5
    min_pixels: int = 2
    literal_variance: bool = False
    literal_roles: bool = False

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.input_size % (2**self.depth):
            raise ValueError(f"input_size {self.input_size} not divisible by 2**depth = {2**self.depth}")
        if not 0 <= self.attention_blocks <= self.depth:
            raise ValueError(f"attention_blocks must be in 0..{self.depth}, got {self.attention_blocks}")

    def channels(self, stage: int) -> int:
        """Width of encoder stage ``stage`` (1-based): doubling, capped at 8x base."""
        return min(self.base_channels * 2 ** (stage - 1), 8 * self.base_channels)


@dataclass
class DiscriminatorConfig:
    base_channels: int = 16
    layers: int = 4
    in_channels: int = 3


@dataclass
class DomainEncoderConfig:
    stages: int = 3
    base_channels: int = 16
    embedding: int = 128
    in_channels: int = 3

    def validate(self) -> None:
        if self.embedding < 1:
            raise ValueError("embedding length must be >= 1")


@dataclass
class LossWeights:
    lambda1: float = 1.0  # adversarial
    lambda2: float = 1.0  # domain verification
    lambda3: float = 100.0  # reconstruction

    def validate(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 20
    seed: int = 0
    adversarial: bool = True
    verification: bool = True
    checkpoint_every: int = 1

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class DataConfig:
    train_size: int = 500
    test_size: int = 100
    seed: int = 0


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    domain: DomainEncoderConfig = field(default_factory=DomainEncoderConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> None:
        self.generator.validate()
        self.domain.validate()
        self.loss.validate()
        self.train.validate()

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls()
        for section, values in d.items():
            _assign(cfg, section, values)
        return cfg


def preset(scale: str) -> RunConfig:
    """``desk`` (CPU minutes) or ``paper`` (256px, depth 7, 100 epochs, batch 12)."""
    cfg = RunConfig()
    if scale == "paper":
        cfg.generator.depth = 7
        cfg.generator.input_size = 256
        cfg.generator.base_channels = 64
        cfg.discriminator.base_channels = 64
        cfg.domain.base_channels = 64
        cfg.train.epochs = 100
        cfg.train.batch_size = 12
    elif scale == "desk":
        # the short CPU budget needs a larger step than the paper's 2e-4
        cfg.train.lr = 1e-3
    else:
        raise ValueError(f"unknown scale preset {scale!r} (desk|paper)")
    return cfg


def _coerce(current: Any, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw.strip()


def _assign(cfg: RunConfig, section: str, values: dict) -> None:
    if not hasattr(cfg, section):
        raise ValueError(f"unknown config section [{section}]")
    target = getattr(cfg, section)
    names = {f.name for f in dataclasses.fields(target)}
    for key, raw in values.items():
        if key not in names:
            raise ValueError(f"unknown key {key!r} in section [{section}]")
        setattr(target, key, _coerce(getattr(target, key), raw))


def load_config(path, scale: str = "desk") -> RunConfig:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    cfg = preset(parser.get("run", "scale", fallback=scale) if parser.has_section("run") else scale)
    for section in parser.sections():
        if section == "run":
            continue
        _assign(cfg, section, dict(parser.items(section)))
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in values.items())
        lines.append("")
    return "\n".join(lines)
