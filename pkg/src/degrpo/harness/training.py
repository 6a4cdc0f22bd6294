"""Round-based DE-GRPO / vanilla GRPO training loop with CSV and JSON outputs."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from ..algorithm import DEGRPOConfig, LearnerState, degrpo_step
from ..encoding import HierarchicalEncoder
from ..policy import ToyPolicy, ValueBaseline
from ..reward import ChannelWeights, paired_similarities
from .config import RunConfig
from .data import SyntheticDataset, generate_dataset
from .stages import make_regression_task, pretrain

METRICS_HEADER = ("iteration", "sample_id", "U", "s", "delta_mode", "batch_loss", "mean_reward")
PLOT_HEADER = ("recurrence_round", "iteration", "mean_reward")
MODES = {"de-grpo": "de-grpo", "vanilla": "vanilla-grpo", "vanilla-grpo": "vanilla-grpo"}


def _num(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


@dataclass
class IterationLog:
    iteration: int
    round: int
    batch_loss: float
    mean_reward: float
    batch_size: int
    active: int
    visits: int
    eval_reward: Optional[float]


@dataclass
class RunReport:
    mode: str
    config: dict
    target: Optional[float]
    oracle_reward: Optional[float]
    iterations: list[IterationLog] = field(default_factory=list)
    metrics_rows: list[tuple] = field(default_factory=list)
    round_rewards: list[float] = field(default_factory=list)
    round_active: list[int] = field(default_factory=list)
    visits_to_target: Optional[int] = None
    steps_to_target: Optional[int] = None
    total_visits: int = 0
    pretrain_log: list[dict] = field(default_factory=list)
    trace: dict = field(default_factory=dict)
    informative_active: Optional[int] = None

    @property
    def active_trajectory(self) -> list[int]:
        return [it.active for it in self.iterations]

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.config["seed"],
            "target_reward": self.target,
            "oracle_reward": self.oracle_reward,
            "visits_to_target": self.visits_to_target,
            "steps_to_target": self.steps_to_target,
            "total_visits": self.total_visits,
            "iterations": len(self.iterations),
            "round_mean_reward": self.round_rewards,
            "round_active": self.round_active,
            "active_trajectory": self.active_trajectory,
            "final_eval_reward": self.iterations[-1].eval_reward if self.iterations else None,
            "informative_active": self.informative_active,
            "pretrain_final_loss": self.pretrain_log[-1]["loss"] if self.pretrain_log else None,
            "trace": self.trace,
            "iteration_log": [dataclasses.asdict(it) for it in self.iterations],
        }


def _greedy_reward(policy: ToyPolicy, X: np.ndarray, T: np.ndarray, alpha: ChannelWeights) -> float:
    if X.shape[0] == 0:
        return float("nan")
    return float((paired_similarities(policy.greedy_many(X), T, policy.vocab) @ alpha.weights).mean())


def _pretrain_encoder(cfg: RunConfig, rng: np.random.Generator) -> list[dict]:
    enc = cfg.encoder
    model = HierarchicalEncoder(enc.layer_dims, enc.dim, enc.n_queries, rng=rng, shared_kv=enc.shared_kv)
    task = make_regression_task(enc.layer_dims, enc.dim, enc.n_examples, rng)
    return pretrain(model, cfg.schedule, task)


def run_training(cfg: RunConfig, mode: str = "de-grpo", dataset: Optional[SyntheticDataset] = None,
                 pretrain_encoder: bool = True) -> RunReport:
    if mode not in MODES:
        raise ValueError(f"mode: expected one of {sorted(MODES)} (got {mode!r})")
    mode = MODES[mode]
    dcfg = cfg.degrpo
    ds = dataset if dataset is not None else generate_dataset(cfg.dataset, s_init=dcfg.s_init)
    for r in ds.records:
        r.s, r.status, r.history = dcfg.s_init, "active", []

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    enc_rng, sample_rng, order_rng = (np.random.default_rng(s) for s in seeds)

    pre_log = _pretrain_encoder(cfg, enc_rng) if pretrain_encoder else []
    override = [st.channel_weights for st in cfg.schedule.stages if st.channel_weights is not None]
    alpha = ChannelWeights.from_weights(override[-1]) if override else ChannelWeights()

    policy = ToyPolicy(ds.vocab, ds.spec.n_features, emotion_exclusive=ds.spec.emotion_exclusive)
    state = LearnerState(policy, policy.snapshot(), ValueBaseline(ds.spec.n_features), alpha,
                         {r.id: r for r in ds.records}, sample_rng)

    inf = [r for r in ds.records if r.informative]
    X_inf = np.stack([r.x for r in inf]) if inf else np.zeros((0, ds.spec.n_features))
    T_inf = np.stack([state.truth_vector(r.id) for r in inf]) if inf else np.zeros((0, len(ds.vocab)))
    oracle = _greedy_reward(ds.oracle_policy(), X_inf, T_inf, alpha) if inf else None
    target = None if oracle is None else cfg.training.target_fraction * oracle

    report = RunReport(mode, cfg.to_dict(), target, oracle, pretrain_log=pre_log)
    evaluate = (lambda: _greedy_reward(policy, X_inf, T_inf, state.alpha)) if target is not None else None
    rl_loop(state, dcfg, mode, cfg.training.max_visits, order_rng, report, evaluate,
            eval_every=cfg.training.eval_every, stop_at_target=cfg.training.stop_at_target)
    report.informative_active = sum(1 for sid in state.active_ids() if state.records[sid].informative)
    if cfg.output_dir:
        write_outputs(report, cfg.output_dir)
    return report


def rl_loop(state: LearnerState, dcfg: DEGRPOConfig, mode: str, max_visits: int, order_rng: np.random.Generator,
            report: RunReport, evaluate: Optional[Callable[[], float]] = None, eval_every: int = 1,
            stop_at_target: bool = False) -> RunReport:
    """Rounds are shuffled passes over the active set; the budget is checked between rounds."""
    visits = iteration = rnd = 0
    while visits < max_visits:
        active = state.active_ids()
        if not active:
            break
        rnd += 1
        order = [active[i] for i in order_rng.permutation(len(active))]
        round_rewards = []
        for k in range(0, len(order), dcfg.batch_size):
            batch = [sid for sid in order[k:k + dcfg.batch_size] if state.records[sid].active]
            if not batch:
                continue
            step = degrpo_step(state, batch, dcfg, iteration, mode)
            visits += len(batch)
            for o in step.outcomes:
                report.metrics_rows.append((iteration, o.sample_id, _num(o.U), _num(o.s), o.delta_mode,
                                            repr(step.batch_loss), repr(o.mean_reward)))
                round_rewards.append(o.mean_reward)
            ev = None
            if evaluate is not None and iteration % eval_every == 0:
                ev = evaluate()
                if report.visits_to_target is None and report.target is not None and ev >= report.target:
                    report.visits_to_target, report.steps_to_target = visits, iteration + 1
            report.iterations.append(IterationLog(iteration, rnd, step.batch_loss, step.mean_reward,
                                                  len(batch), len(state.active_ids()), visits, ev))
            iteration += 1
        report.round_rewards.append(float(np.mean(round_rewards)))
        report.round_active.append(len(state.active_ids()))
        if stop_at_target and report.visits_to_target is not None:
            break
    report.total_visits = visits
    report.trace = dict(sorted(state.trace.items()))
    return report


def write_metrics(report: RunReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        w.writerows(report.metrics_rows)


def emit_plot_data(report: Union[RunReport, dict], path) -> Path:
    """Tidy (recurrence_round, iteration, mean_reward) rows copied straight from a report or its summary."""
    if isinstance(report, RunReport):
        rows = [(it.round, it.iteration, it.mean_reward) for it in report.iterations]
    else:
        rows = [(it["round"], it["iteration"], it["mean_reward"]) for it in report.get("iteration_log", [])]
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        w.writerows((r, i, repr(float(m))) for r, i, m in rows)
    return path


def write_outputs(report: RunReport, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out / "metrics.csv", "summary": out / "summary.json", "plot": out / "plot_data.csv"}
    write_metrics(report, paths["metrics"])
    paths["summary"].write_text(json.dumps(report.summary(), indent=2) + "\n")
    emit_plot_data(report, paths["plot"])
    return paths


def read_plot_data(path) -> list[tuple[int, int, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != PLOT_HEADER:
        raise ValueError(f"{path}: missing header {','.join(PLOT_HEADER)}")
    return [(int(a), int(b), float(c)) for a, b, c in rows[1:]]
