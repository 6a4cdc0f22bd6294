"""Paired-seed DE-GRPO vs vanilla comparison on visits-to-target."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import RunConfig
from .training import RunReport, run_training


def dips(values: Sequence[float]) -> list[float]:
    """Sizes of every decrease between consecutive values."""
    return [a - b for a, b in zip(values, values[1:]) if b < a]


def nondecreasing(values: Sequence[float], tol: float = 0.01, allowed: int = 1) -> bool:
    d = dips(values)
    return len(d) <= allowed and all(x <= tol for x in d)


@dataclass
class Comparison:
    seeds: list[int]
    de: list[RunReport] = field(default_factory=list)
    vanilla: list[RunReport] = field(default_factory=list)

    @staticmethod
    def _visits(reports) -> list[float]:
        return [math.inf if r.visits_to_target is None else float(r.visits_to_target) for r in reports]

    @property
    def de_visits(self) -> list[float]:
        return self._visits(self.de)

    @property
    def vanilla_visits(self) -> list[float]:
        return self._visits(self.vanilla)

    @property
    def ratio(self) -> float:
        """Median DE visits over median vanilla visits; unreached targets count as infinite."""
        de, va = float(np.median(self.de_visits)), float(np.median(self.vanilla_visits))
        if math.isinf(de):
            return math.inf
        return 0.0 if math.isinf(va) else de / va

    @property
    def de_monotone(self) -> list[bool]:
        return [nondecreasing(r.round_rewards) for r in self.de]

    def table(self) -> str:
        rows = ["seed  de_visits  vanilla_visits  de_final_eval  vanilla_final_eval  de_round_dips"]
        for s, d, v in zip(self.seeds, self.de, self.vanilla):
            fe = lambda r: r.iterations[-1].eval_reward if r.iterations else float("nan")
            rows.append(f"{s:4d}  {str(d.visits_to_target):>9s}  {str(v.visits_to_target):>14s}  "
                        f"{fe(d):13.3f}  {fe(v):18.3f}  {[round(x, 4) for x in dips(d.round_rewards)]}")
        return "\n".join(rows)


def compare_modes(base: RunConfig, seeds: Sequence[int]) -> Comparison:
    """Both modes on the same dataset and RNG streams for each seed."""
    out = Comparison(list(seeds))
    for seed in seeds:
        cfg = copy.deepcopy(base)
        cfg.seed, cfg.dataset.seed, cfg.output_dir = seed, seed, None
        out.de.append(run_training(cfg, "de-grpo", pretrain_encoder=False))
        out.vanilla.append(run_training(cfg, "vanilla-grpo", pretrain_encoder=False))
    return out
