"""Data-efficient GRPO: per-sample utility, recurrent lifecycle, clipped pairwise objective.

A sample's utility is the product of two geometric means over its
preference pairs: the reward gaps (how clearly the reward separates the
candidates) and the log-prob gradient gaps (how differently the candidates
would move the policy).  An exponentially smoothed indicator of
"above the batch threshold" decides whether the sample is dropped, kept,
or kept with a decayed advantage.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .policy import ToyPolicy, ValueBaseline, baseline_update, kl_and_grad
from .reward import (
    ChannelWeights,
    StructuredResponse,
    Vocabulary,
    indicator_similarities,
    reward_logit_jacobian,
    update_channel_weights,
)

REMOVED = "removed"
DECAY = "decay"
KEEP = "keep"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class DegenerateSampleError(ValueError):
    """A sample produced no preference pairs (all candidate rewards tie)."""


class NumericRangeError(ArithmeticError):
    pass


class ExhaustedError(RuntimeError):
    """No active samples remain."""


@dataclass
class DEGRPOConfig:
    lam: float = 0.8
    tau_remove: float = 0.20
    tau_keep: float = 0.80
    delta: float = 0.50
    clip_eps: float = 0.20
    beta: float = 0.01
    n_candidates: int = 4
    gm_floor: float = 1e-8
    kl_sign: str = "penalize"
    removal_rule: str = "strict"
    s_init: float = 0.5
    batch_size: int = 32
    lr_policy: float = 1e-2
    lr_baseline: float = 1e-2
    lr_alpha: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(f"{name}: {msg} (got {getattr(self, name)!r})")

        need(0.0 <= self.lam < 1.0, "lam", "must lie in [0, 1)")
        need(0.0 <= self.tau_remove <= 1.0, "tau_remove", "must lie in [0, 1]")
        need(0.0 <= self.tau_keep <= 1.0, "tau_keep", "must lie in [0, 1]")
        need(self.tau_remove < self.tau_keep, "tau_remove", "must be below tau_keep")
        need(0.0 < self.delta < 1.0, "delta", "must lie in (0, 1)")
        need(self.clip_eps > 0.0, "clip_eps", "must be positive")
        need(self.beta >= 0.0, "beta", "must be non-negative")
        need(isinstance(self.n_candidates, int) and self.n_candidates >= 4, "n_candidates", "must be an integer >= 4")
        need(self.gm_floor > 0.0, "gm_floor", "must be positive")
        need(self.kl_sign in ("penalize", "literal"), "kl_sign", "must be 'penalize' or 'literal'")
        need(self.removal_rule in ("strict", "inclusive"), "removal_rule", "must be 'strict' or 'inclusive'")
        need(0.0 <= self.s_init <= 1.0, "s_init", "must lie in [0, 1]")
        need(isinstance(self.batch_size, int) and self.batch_size >= 1, "batch_size", "must be a positive integer")
        for name in ("lr_policy", "lr_baseline", "lr_alpha"):
            need(getattr(self, name) >= 0.0, name, "must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class PreferencePair:
    winner: Any
    loser: Any
    r_w: float
    r_l: float
    g_w: Optional[np.ndarray] = None
    g_l: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.r_w < self.r_l:
            raise ValueError("winner reward must not be below loser reward")


@dataclass
class SampleRecord:
    id: str
    x: np.ndarray
    truth: StructuredResponse
    s: float = 0.5
    status: str = "active"
    informative: bool = True
    history: list = field(default_factory=list)

    @property
    def active(self) -> bool:
        return self.status == "active"


# ---------------------------------------------------------------- pairs and utility

def pair_indices(rewards: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All unordered pairs with distinct rewards, oriented (winner, loser)."""
    r = np.asarray(rewards, dtype=np.float64)
    i, j = np.triu_indices(r.size, k=1)
    keep = r[i] != r[j]
    i, j = i[keep], j[keep]
    swap = r[i] < r[j]
    return np.where(swap, j, i), np.where(swap, i, j)


def build_pairs(candidates: Sequence[StructuredResponse], truth: StructuredResponse, alpha: ChannelWeights,
                vocab: Vocabulary, grads: Optional[np.ndarray] = None) -> list[PreferencePair]:
    """Preference pairs over candidates; an empty list marks a degenerate sample."""
    Y = np.stack([c.to_indicator(vocab) for c in candidates])
    rewards = indicator_similarities(Y, truth.to_indicator(vocab), vocab) @ alpha.weights
    w, l = pair_indices(rewards)
    return [
        PreferencePair(candidates[a], candidates[b], float(rewards[a]), float(rewards[b]),
                       None if grads is None else grads[a], None if grads is None else grads[b])
        for a, b in zip(w, l)
    ]


def geometric_mean(values, floor: float = 1e-8) -> float:
    """exp(mean(log(max(v, floor)))) over a non-empty collection."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DegenerateSampleError("geometric mean over an empty pair set")
    return float(np.exp(np.mean(np.log(np.maximum(v, floor)))))


def reward_separability(pairs, gm_floor: float = 1e-8) -> float:
    gaps = [abs(p.r_w - p.r_l) for p in pairs] if _is_pair_list(pairs) else np.abs(np.asarray(pairs))
    return geometric_mean(gaps, gm_floor)


def gradient_sensitivity(pairs, gm_floor: float = 1e-8) -> float:
    if _is_pair_list(pairs):
        if any(p.g_w is None or p.g_l is None for p in pairs):
            raise ValueError("gradient_sensitivity needs pairs carrying g_w and g_l")
        norms = [np.linalg.norm(p.g_w - p.g_l) for p in pairs]
    else:
        norms = np.linalg.norm(np.atleast_2d(pairs), axis=1)
    return geometric_mean(norms, gm_floor)


def _is_pair_list(pairs) -> bool:
    return isinstance(pairs, (list, tuple)) and (not pairs or isinstance(pairs[0], PreferencePair))


def utility(r_hat: float, g_hat: float) -> float:
    if r_hat < 0 or g_hat < 0:
        raise ValueError("utility factors must be non-negative")
    return r_hat * g_hat


def batch_threshold(utilities: Sequence[float]) -> float:
    """Lower median of the batch utilities."""
    u = sorted(utilities)
    if not u:
        raise ValueError("batch_threshold needs a non-empty batch")
    return u[(len(u) - 1) // 2]


def recurrent_update(s: float, U: float, tau: float, lam: float) -> float:
    return lam * s + (1.0 - lam) * (1.0 if U > tau else 0.0)


def lifecycle_factor(s: float, cfg: DEGRPOConfig):
    """``REMOVED`` if s <= tau_remove, ``cfg.delta`` if s >= tau_keep, else 1.0."""
    if s <= cfg.tau_remove:
        return REMOVED
    if s >= cfg.tau_keep:
        return cfg.delta
    return 1.0


def mean_reward_gap(pairs) -> float:
    if _is_pair_list(pairs):
        if not pairs:
            raise DegenerateSampleError("no pairs")
        return float(np.mean([p.r_w - p.r_l for p in pairs]))
    return float(np.mean(pairs))


def advantage(pairs, baseline_value: float, delta_factor: float) -> float:
    return delta_factor * (mean_reward_gap(pairs) - baseline_value)


# ---------------------------------------------------------------- objective

@dataclass
class ObjectiveTerm:
    """One sample's contribution: its features, winner/loser indicator rows, advantage."""

    x: np.ndarray
    Y_w: np.ndarray
    Y_l: np.ndarray
    adv: float
    sample_id: str = ""


def sample_objective(term: ObjectiveTerm, current: ToyPolicy, old: ToyPolicy, ref: ToyPolicy,
                     cfg: DEGRPOConfig) -> tuple[float, np.ndarray, dict]:
    """Per-sample objective (maximized) and its gradient w.r.t. ``current``'s parameters."""
    x = term.x
    lw = current.log_prob_many(x, term.Y_w) - old.log_prob_many(x, term.Y_w)
    ll = current.log_prob_many(x, term.Y_l) - old.log_prob_many(x, term.Y_l)
    with np.errstate(over="ignore", invalid="ignore"):
        rho_w, rho_l = np.exp(lw), np.exp(ll)
        d = rho_w - rho_l
    bad = ~np.isfinite(d)
    if bad.any():
        k = int(np.argmax(bad))
        raise NumericRangeError(f"sample {term.sample_id!r} pair {k}: probability ratio out of range")
    lo, hi = 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps
    d_clip = np.clip(d, lo, hi)
    unclipped = log_expit(d) * term.adv
    clipped = log_expit(d_clip) * term.adv
    use_unclipped = unclipped <= clipped
    surrogate = np.where(use_unclipped, unclipped, clipped)
    # clipped branch carries gradient only where clip is the identity
    live = use_unclipped | ((d > lo) & (d < hi))
    coef = np.where(live, term.adv * expit(-d), 0.0)
    dz = (coef * rho_w)[:, None] * current.logit_scores(x, term.Y_w) \
        - (coef * rho_l)[:, None] * current.logit_scores(x, term.Y_l)
    grad = current.expand_grad(x, dz.mean(axis=0))[0]
    value = float(surrogate.mean())

    kl, kl_grad = kl_and_grad(current, ref, x)
    sign = -1.0 if cfg.kl_sign == "penalize" else 1.0
    value += sign * cfg.beta * kl
    grad = grad + sign * cfg.beta * kl_grad
    # d value / d adv, used for the channel-weight gradient
    dadv = float(np.where(use_unclipped, log_expit(d), log_expit(d_clip)).mean())
    info = {"delta": d, "unclipped": unclipped, "clipped": clipped, "kl": kl, "dadv": dadv}
    return value, grad, info


def objective(terms: Sequence[ObjectiveTerm], current: ToyPolicy, old: ToyPolicy, ref: ToyPolicy,
              cfg: DEGRPOConfig) -> tuple[float, np.ndarray]:
    """Batch loss (negated mean objective) and its gradient w.r.t. ``current``."""
    loss, grad, _ = _evaluate(terms, current, old, ref, cfg)
    return loss, grad


def _evaluate(terms, current, old, ref, cfg):
    if not terms:
        return 0.0, np.zeros(current.n_params), []
    total, grad, infos = 0.0, np.zeros(current.n_params), []
    for t in terms:
        v, g, info = sample_objective(t, current, old, ref, cfg)
        total += v
        grad += g
        infos.append(info)
    n = len(terms)
    return -total / n, -grad / n, infos


# ---------------------------------------------------------------- one iteration

@dataclass
class SampleOutcome:
    sample_id: str
    U: Optional[float]
    s: Optional[float]
    delta_mode: str
    mean_reward: float
    n_pairs: int


@dataclass
class StepReport:
    iteration: int
    outcomes: list[SampleOutcome]
    batch_loss: float
    mean_reward: float
    removed: list[str]


@dataclass
class LearnerState:
    """Everything mutated by training steps."""

    policy: ToyPolicy
    ref: ToyPolicy
    baseline: ValueBaseline
    alpha: ChannelWeights
    records: dict[str, SampleRecord]
    rng: np.random.Generator
    tracked: Optional[np.ndarray] = None
    trace: Counter = field(default_factory=Counter)
    _truth: dict = field(default_factory=dict, repr=False)

    def truth_vector(self, sid: str) -> np.ndarray:
        if sid not in self._truth:
            self._truth[sid] = self.records[sid].truth.to_indicator(self.policy.vocab)
        return self._truth[sid]

    def active_ids(self) -> list[str]:
        return [sid for sid, r in self.records.items() if r.active]


def degrpo_step(state: LearnerState, batch: Sequence[str], cfg: DEGRPOConfig, iteration: int,
                mode: str = "de-grpo") -> StepReport:
    """One pass of the per-sample loop followed by one optimizer step.

    ``mode="vanilla-grpo"`` skips utility, the recurrent state, and the
    lifecycle factor; everything else is shared.
    """
    if mode not in ("de-grpo", "vanilla-grpo"):
        raise ValueError(f"unknown mode {mode!r}")
    de = mode == "de-grpo"
    if not batch:
        raise ExhaustedError("no active samples left to train on")
    for sid in batch:
        if not state.records[sid].active:
            raise ValueError(f"sample {sid!r} is removed and cannot be batched")

    policy, vocab, trace = state.policy, state.policy.vocab, state.trace
    old = policy.snapshot()
    weights = state.alpha.weights
    K = cfg.n_candidates

    # phase 1: read-only per-sample evaluation
    evals = []
    for sid in batch:
        rec = state.records[sid]
        Y = policy.sample(rec.x, K, state.rng)
        sims = indicator_similarities(Y, state.truth_vector(sid), vocab)
        rewards = sims @ weights
        trace["build_pairs"] += 1
        w, l = pair_indices(rewards)
        ev = {"sid": sid, "Y": Y, "sims": sims, "rewards": rewards, "w": w, "l": l, "U": 0.0}
        if w.size:
            G = policy.log_prob_grad_many(rec.x, Y)
            if state.tracked is not None:
                G = G[:, state.tracked]
            trace["reward_separability"] += 1
            r_hat = reward_separability(rewards[w] - rewards[l], cfg.gm_floor)
            trace["gradient_sensitivity"] += 1
            g_hat = gradient_sensitivity(G[w] - G[l], cfg.gm_floor)
            ev["r_hat"], ev["g_hat"] = r_hat, g_hat
            if de:
                trace["utility"] += 1
                ev["U"] = utility(r_hat, g_hat)
        elif de:
            trace["utility"] += 1
        evals.append(ev)

    tau = batch_threshold([ev["U"] for ev in evals]) if de else None

    # phase 2: registry updates and advantages, single writer
    terms, outcomes, removed = [], [], []
    baseline_targets, sim_gaps = [], []
    for ev in evals:
        rec = state.records[ev["sid"]]
        s_val, mode_name, factor = None, KEEP, 1.0
        if de:
            trace["recurrent_update"] += 1
            rec.s = recurrent_update(rec.s, ev["U"], tau, cfg.lam)
            s_val = rec.s
            drop = rec.s <= cfg.tau_remove if cfg.removal_rule == "inclusive" else rec.s < cfg.tau_remove
            if drop:
                rec.status = REMOVED
                removed.append(rec.id)
                mode_name = REMOVED
            else:
                trace["lifecycle_factor"] += 1
                f = lifecycle_factor(rec.s, cfg)
                # s == tau_remove survives the strict in-loop check and falls in the middle branch
                factor = 1.0 if f == REMOVED else f
                mode_name = DECAY if factor != 1.0 else KEEP
        rec.history.append((iteration, ev["U"] if de else None, s_val, mode_name))
        outcomes.append(SampleOutcome(rec.id, ev["U"] if de else None, s_val, mode_name,
                                      float(ev["rewards"].mean()), int(ev["w"].size)))
        if mode_name == REMOVED or ev["w"].size == 0:
            continue
        gaps = ev["rewards"][ev["w"]] - ev["rewards"][ev["l"]]
        b = state.baseline(rec.x)
        trace["advantage"] += 1
        adv = advantage(gaps, b, factor)
        terms.append(ObjectiveTerm(rec.x, ev["Y"][ev["w"]], ev["Y"][ev["l"]], adv, rec.id))
        baseline_targets.append(float(gaps.mean()))
        if cfg.lr_alpha > 0:
            sim_gaps.append(factor * (ev["sims"][ev["w"]] - ev["sims"][ev["l"]]).mean(axis=0))

    # phase 3: optimizer step
    trace["objective"] += 1
    loss, grad, infos = _evaluate(terms, policy, old, state.ref, cfg)
    if terms:
        if cfg.lr_alpha > 0:
            # the objective sees channel weights only through each advantage's mean reward gap
            d_weights = sum(info["dadv"] * g for info, g in zip(infos, sim_gaps)) / len(terms)
            d_logits = reward_logit_jacobian(state.alpha) @ d_weights
            state.alpha = update_channel_weights(state.alpha, -d_logits, cfg.lr_alpha)
        policy.theta -= cfg.lr_policy * grad
        for t, target in zip(terms, baseline_targets):
            trace["baseline_update"] += 1
            baseline_update(state.baseline, t.x, target, cfg.lr_baseline)

    mean_reward = float(np.mean([ev["rewards"].mean() for ev in evals]))
    return StepReport(iteration, outcomes, float(loss), mean_reward, removed)
