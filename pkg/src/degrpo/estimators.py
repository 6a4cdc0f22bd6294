"""scikit-learn style wrappers around the encoder stack and the RL learner."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .algorithm import DEGRPOConfig, LearnerState, SampleRecord
from .encoding import EncoderInput, HierarchicalEncoder
from .harness.stages import StageSchedule, pretrain
from .harness.training import MODES, RunReport, rl_loop
from .policy import ToyPolicy, ValueBaseline
from .reward import ChannelWeights, StructuredResponse, Vocabulary, paired_similarities


class _FixedTargets:
    def __init__(self, examples, targets):
        self.examples = list(examples)
        self._targets = {id(x): np.asarray(t, dtype=np.float64) for x, t in zip(self.examples, targets)}

    def target(self, x, n_rows):
        return self._targets[id(x)]


def _check_inputs(X) -> list[EncoderInput]:
    X = list(X)
    if not X or not all(isinstance(x, EncoderInput) for x in X):
        raise ValueError("X must be a non-empty sequence of EncoderInput")
    return X


class PromptQueryEncoder(TransformerMixin, BaseEstimator):
    """Hierarchical prompt-query encoder; ``transform`` returns flattened fused tokens (n, M * dim).

    ``fit`` with targets runs the staged schedule as a regression onto ``y``
    (each target an M x dim array).  Without targets it only initializes.
    """

    def __init__(self, layer_dims: Sequence[int] = (6, 5, 4), dim: int = 8, n_queries: int = 8,
                 shared_kv: bool = False, schedule: Optional[StageSchedule] = None, random_state: int = 0):
        self.layer_dims = layer_dims
        self.dim = dim
        self.n_queries = n_queries
        self.shared_kv = shared_kv
        self.schedule = schedule
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _check_inputs(X)
        rng = np.random.default_rng(self.random_state)
        self.model_ = HierarchicalEncoder(tuple(self.layer_dims), self.dim, self.n_queries, rng=rng,
                                          shared_kv=self.shared_kv)
        self.training_log_ = []
        if y is not None:
            y = [np.asarray(t, dtype=np.float64) for t in y]
            if len(y) != len(X) or any(t.shape != (self.n_queries, self.dim) for t in y):
                raise ValueError(f"y must hold one {self.n_queries} x {self.dim} target per input")
            schedule = self.schedule if self.schedule is not None else StageSchedule()
            self.training_log_ = pretrain(self.model_, schedule, _FixedTargets(X, y))
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return np.stack([self.model_.forward(x).fused.data.ravel() for x in _check_inputs(X)])

    def fusion_weights(self, X) -> np.ndarray:
        """(n, 2) general/facial fusion weights."""
        check_is_fitted(self, "model_")
        return np.array([self.model_.forward(x).weights.values() for x in _check_inputs(X)])


class DEGRPOLearner(BaseEstimator):
    """Fits a factorized token policy from features ``X`` to structured annotations ``y``.

    ``y`` is a sequence of :class:`StructuredResponse` or an (n, V) indicator
    matrix over ``vocabulary``.  ``predict`` returns the greedy responses as
    indicator rows and ``score`` their mean fine-grained reward.
    """

    def __init__(self, mode: str = "de-grpo", vocabulary: Optional[Vocabulary] = None, n_candidates: int = 4,
                 batch_size: int = 32, lr_policy: float = 10.0, lr_baseline: float = 1e-2, max_visits: int = 4096,
                 lam: float = 0.8, tau_remove: float = 0.2, tau_keep: float = 0.8, delta: float = 0.5,
                 clip_eps: float = 0.2, beta: float = 0.01, random_state: int = 0):
        self.mode = mode
        self.vocabulary = vocabulary
        self.n_candidates = n_candidates
        self.batch_size = batch_size
        self.lr_policy = lr_policy
        self.lr_baseline = lr_baseline
        self.max_visits = max_visits
        self.lam = lam
        self.tau_remove = tau_remove
        self.tau_keep = tau_keep
        self.delta = delta
        self.clip_eps = clip_eps
        self.beta = beta
        self.random_state = random_state

    def _vocab(self) -> Vocabulary:
        return self.vocabulary if self.vocabulary is not None else Vocabulary.trimmed(8)

    def _indicators(self, y, n: int) -> np.ndarray:
        vocab = self._vocab()
        if len(y) and isinstance(y[0], StructuredResponse):
            Y = np.stack([r.to_indicator(vocab) for r in y])
        else:
            Y = check_array(y, dtype=np.float64)
        if Y.shape != (n, len(vocab)):
            raise ValueError(f"y must have {n} rows of {len(vocab)} indicators")
        return Y

    def config(self) -> DEGRPOConfig:
        return DEGRPOConfig(lam=self.lam, tau_remove=self.tau_remove, tau_keep=self.tau_keep, delta=self.delta,
                            clip_eps=self.clip_eps, beta=self.beta, n_candidates=self.n_candidates,
                            batch_size=self.batch_size, lr_policy=self.lr_policy, lr_baseline=self.lr_baseline)

    def fit(self, X, y):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {sorted(MODES)}")
        X = check_array(X, dtype=np.float64)
        Y = self._indicators(y, X.shape[0])
        vocab, cfg = self._vocab(), self.config()
        records = {
            f"s{i:05d}": SampleRecord(f"s{i:05d}", X[i], StructuredResponse.from_indicator(Y[i], vocab), s=cfg.s_init)
            for i in range(X.shape[0])
        }
        sample_rng, order_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(self.random_state).spawn(2))
        policy = ToyPolicy(vocab, X.shape[1])
        state = LearnerState(policy, policy.snapshot(), ValueBaseline(X.shape[1]), ChannelWeights(), records,
                             sample_rng)
        report = RunReport(MODES[self.mode], self.get_params(), None, None)
        self.report_ = rl_loop(state, cfg, MODES[self.mode], self.max_visits, order_rng, report)
        self.policy_ = policy
        self.active_mask_ = np.array([r.active for r in records.values()])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "policy_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.policy_.greedy_many(X)

    def score(self, X, y) -> float:
        X = check_array(X, dtype=np.float64)
        T = self._indicators(y, X.shape[0])
        return float((paired_similarities(self.predict(X), T, self._vocab()) @ ChannelWeights().weights).mean())
