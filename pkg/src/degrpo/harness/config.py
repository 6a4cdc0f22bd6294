"""Run configuration: everything a training run needs, serializable to YAML."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..algorithm import ConfigError, DEGRPOConfig
from .data import SyntheticDatasetSpec
from .stages import Stage, StageSchedule


@dataclass
class EncoderConfig:
    layer_dims: tuple[int, ...] = (6, 5, 4)
    dim: int = 8
    n_queries: int = 8
    shared_kv: bool = False
    n_examples: int = 6

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if not self.layer_dims or min(self.layer_dims) < 1:
            raise ConfigError(f"encoder.layer_dims: need at least one positive width (got {self.layer_dims!r})")
        for name in ("dim", "n_queries", "n_examples"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"encoder.{name}: must be a positive integer (got {getattr(self, name)!r})")
        if self.dim < 2:
            raise ConfigError(f"encoder.dim: layer norm needs width >= 2 (got {self.dim})")


@dataclass
class TrainingConfig:
    max_visits: int = 10240
    target_fraction: float = 0.75
    stop_at_target: bool = False
    eval_every: int = 1

    def __post_init__(self):
        if self.max_visits < 1:
            raise ConfigError(f"training.max_visits: must be positive (got {self.max_visits})")
        if not 0.0 < self.target_fraction <= 1.0:
            raise ConfigError(f"training.target_fraction: must lie in (0, 1] (got {self.target_fraction})")
        if self.eval_every < 1:
            raise ConfigError(f"training.eval_every: must be positive (got {self.eval_every})")


@dataclass
class RunConfig:
    seed: int = 0
    dataset: SyntheticDatasetSpec = field(default_factory=SyntheticDatasetSpec)
    degrpo: DEGRPOConfig = field(default_factory=lambda: DEGRPOConfig(lr_policy=10.0))
    schedule: StageSchedule = field(default_factory=lambda: StageSchedule())
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    output_dir: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        enc = dataclasses.asdict(self.encoder)
        enc["layer_dims"] = list(enc["layer_dims"])
        return {
            "seed": self.seed,
            "dataset": self.dataset.to_dict(),
            "degrpo": self.degrpo.to_dict(),
            "schedule": self.schedule.to_dict(),
            "encoder": enc,
            "training": dataclasses.asdict(self.training),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, raw: Optional[dict]) -> "RunConfig":
        raw = dict(raw or {})
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown top-level key")

        def section(name, typ):
            body = raw.get(name) or {}
            if not isinstance(body, dict):
                raise ConfigError(f"{name}: expected a mapping")
            names = {f.name for f in dataclasses.fields(typ)}
            extra = sorted(set(body) - names)
            if extra:
                raise ConfigError(f"{name}.{extra[0]}: unknown key")
            try:
                return typ(**body)
            except ConfigError as e:
                msg = str(e)
                raise ConfigError(msg if msg.startswith(f"{name}.") else f"{name}.{msg}") from None
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{name}: {e}") from None

        kwargs: dict[str, Any] = {
            "dataset": section("dataset", SyntheticDatasetSpec),
            "encoder": section("encoder", EncoderConfig),
            "training": section("training", TrainingConfig),
        }
        if "degrpo" in raw:
            kwargs["degrpo"] = section("degrpo", DEGRPOConfig)
        if raw.get("schedule") is not None:
            try:
                kwargs["schedule"] = StageSchedule.from_dict(raw["schedule"])
            except (TypeError, ValueError, KeyError) as e:
                raise ConfigError(f"schedule: {e}") from None
        if "seed" in raw:
            if not isinstance(raw["seed"], int):
                raise ConfigError(f"seed: must be an integer (got {raw['seed']!r})")
            kwargs["seed"] = raw["seed"]
        if raw.get("output_dir") is not None:
            kwargs["output_dir"] = str(raw["output_dir"])
        return cls(**kwargs)

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML ({e})") from None
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw)


__all__ = ["EncoderConfig", "RunConfig", "Stage", "StageSchedule", "TrainingConfig"]
