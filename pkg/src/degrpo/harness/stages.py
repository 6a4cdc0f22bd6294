"""Progressive freeze/unfreeze schedule and the synthetic encoder pretraining loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..encoding import PARAM_GROUPS, EncoderInput, HierarchicalEncoder, LayerFeatureStack
from ..numerics import Tape


@dataclass
class Stage:
    name: str
    trainable: dict[str, bool]
    steps: int = 20
    lr: float = 1e-2
    # optional reward channel-weight override (attribute, emotion, action) for this stage
    channel_weights: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        missing = [g for g in PARAM_GROUPS if g not in self.trainable]
        unknown = [g for g in self.trainable if g not in PARAM_GROUPS]
        if missing or unknown:
            raise ValueError(f"stage {self.name!r}: every group needs an explicit flag "
                             f"(missing {missing}, unknown {unknown})")
        if self.steps < 0:
            raise ValueError(f"stage {self.name!r}: steps must be non-negative")
        if not self.lr > 0:
            raise ValueError(f"stage {self.name!r}: lr must be positive")
        if self.channel_weights is not None:
            w = tuple(float(v) for v in self.channel_weights)
            if len(w) != 3 or min(w) <= 0:
                raise ValueError(f"stage {self.name!r}: channel_weights must be three positive values")
            self.channel_weights = w

    def to_dict(self) -> dict:
        d = {"name": self.name, "trainable": dict(self.trainable), "steps": self.steps, "lr": self.lr}
        if self.channel_weights is not None:
            d["channel_weights"] = list(self.channel_weights)
        return d


@dataclass
class StageSchedule:
    stages: list[Stage] = field(default_factory=lambda: default_stages())

    def __post_init__(self):
        if not self.stages:
            raise ValueError("a schedule needs at least one stage")
        covered = {g for st in self.stages for g, on in st.trainable.items() if on}
        if covered != set(PARAM_GROUPS):
            raise ValueError(f"groups never trained: {sorted(set(PARAM_GROUPS) - covered)}")

    def __len__(self) -> int:
        return len(self.stages)

    def to_dict(self) -> list[dict]:
        return [st.to_dict() for st in self.stages]

    @classmethod
    def from_dict(cls, items: Sequence[dict]) -> "StageSchedule":
        return cls([Stage(**{**d, "trainable": dict(d["trainable"])}) for d in items])


def default_stages(steps: int = 20, lr: float = 1e-2) -> list[Stage]:
    def flags(*on):
        return {g: g in on for g in PARAM_GROUPS}
    return [
        Stage("alignment", flags("encoders", "adapters"), steps, lr),
        Stage("aggregation", flags("aggregator"), steps, lr),
        Stage("joint", flags("aggregator", "adapters"), steps, lr),
    ]


def apply_stage(schedule: StageSchedule, index: int, model: HierarchicalEncoder) -> dict[str, bool]:
    """Trainable mask over parameter groups for stage ``index`` (0-based)."""
    if not 0 <= index < len(schedule):
        raise IndexError(f"stage index {index} outside 0..{len(schedule) - 1}")
    groups = model.groups()
    mask = dict(schedule.stages[index].trainable)
    if set(mask) != set(groups):
        raise ValueError("schedule and model disagree on parameter groups")
    return mask


@dataclass
class RegressionTask:
    """Planted linear target for the fused tokens: every row equals mean(prompt) A + mean(general) B."""

    A: np.ndarray
    B: np.ndarray
    examples: list[EncoderInput]

    def target(self, x: EncoderInput, n_rows: int) -> np.ndarray:
        row = x.prompt.mean(axis=0) @ self.A + x.general.mean(axis=0) @ self.B
        return np.tile(row, (n_rows, 1))


def make_regression_task(layer_dims: Sequence[int], dim: int, n_examples: int,
                         rng: np.random.Generator) -> RegressionTask:
    A = rng.normal(size=(dim, dim)) / np.sqrt(dim)
    B = rng.normal(size=(dim, dim)) / np.sqrt(dim)
    examples = [
        EncoderInput(
            prompt=rng.normal(size=(3, dim)),
            facial=LayerFeatureStack([rng.normal(size=(4, d)) for d in layer_dims]),
            general=rng.normal(size=(5, dim)),
        )
        for _ in range(n_examples)
    ]
    return RegressionTask(A, B, examples)


def pretrain(model: HierarchicalEncoder, schedule: StageSchedule, task: RegressionTask) -> list[dict]:
    """Full-batch SGD per stage; frozen groups are never written.  Returns one log row per step."""
    log = []
    groups = model.groups()
    for k, stage in enumerate(schedule.stages):
        mask = apply_stage(schedule, k, model)
        live = [p for g, on in mask.items() if on for p in groups[g]]
        for step in range(stage.steps):
            grads = {p.name: np.zeros_like(p.data) for p in live}
            total = 0.0
            for x in task.examples:
                with Tape() as tape:
                    loss = model.loss(x, task.target(x, model.n_queries))
                    g = tape.backward(loss)
                total += float(loss)
                for p in live:
                    grads[p.name] += g.get(p.name, 0.0)
            n = len(task.examples)
            for p in live:
                p.data -= stage.lr * grads[p.name] / n
            log.append({"stage": stage.name, "step": step, "loss": total / n,
                        "trainable": sorted(g for g, on in mask.items() if on)})
    return log
