"""Factorized token-inclusion policy with exact log-probabilities, gradients and KL.

Attribute and action tokens are independent Bernoulli inclusions.  When
``emotion_exclusive`` is on, the emotion channel is a categorical over
"no emotion" plus each emotion token, which is exactly the product of
Bernoullis conditioned on at most one emotion being present.

Logits are affine in the sample features: ``z = x @ W + b``.  Parameters
live in one flat vector ``theta = [W.ravel(), b]``.
"""

from __future__ import annotations

import copy
from typing import Union

import numpy as np
from scipy.special import expit, log_expit

from .reward import StructuredResponse, Vocabulary

SeedLike = Union[int, np.random.Generator, None]


def _rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


class ToyPolicy:
    def __init__(self, vocab: Vocabulary, n_features: int, emotion_exclusive: bool = True,
                 init_scale: float = 0.0, seed: SeedLike = None):
        self.vocab = vocab
        self.n_features = n_features
        self.emotion_exclusive = emotion_exclusive
        self.n_tokens = len(vocab)
        self.theta = np.zeros((n_features + 1) * self.n_tokens)
        if init_scale:
            self.theta[:] = _rng(seed).normal(0.0, init_scale, size=self.theta.size)
        emo = vocab.slices()["emotion"]
        self._emo = emo
        self._bern = np.ones(self.n_tokens, dtype=bool)
        if emotion_exclusive:
            self._bern[emo] = False

    # parameter views
    @property
    def W(self) -> np.ndarray:
        return self.theta[: self.n_features * self.n_tokens].reshape(self.n_features, self.n_tokens)

    @property
    def b(self) -> np.ndarray:
        return self.theta[self.n_features * self.n_tokens:]

    @property
    def n_params(self) -> int:
        return self.theta.size

    def snapshot(self) -> "ToyPolicy":
        return copy.deepcopy(self)

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise ValueError(f"expected {self.n_features} features, got shape {x.shape}")
        return x @ self.W + self.b

    def _emotion_ext_logprobs(self, z: np.ndarray) -> np.ndarray:
        ext = np.concatenate([[0.0], z[self._emo]])
        m = ext.max()
        return ext - (m + np.log(np.exp(ext - m).sum()))

    def inclusion_probs(self, x: np.ndarray) -> np.ndarray:
        """Marginal inclusion probability of each token."""
        z = self.logits(x)
        p = expit(z)
        if self.emotion_exclusive:
            p[self._emo] = np.exp(self._emotion_ext_logprobs(z)[1:])
        return p

    def _as_indicators(self, Y) -> np.ndarray:
        if isinstance(Y, StructuredResponse):
            return Y.to_indicator(self.vocab)[None, :]
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        if Y.shape[1] != self.n_tokens:
            raise ValueError(f"indicator rows must have {self.n_tokens} entries")
        return Y

    def log_prob_many(self, x: np.ndarray, Y) -> np.ndarray:
        Y = self._as_indicators(Y)
        z = self.logits(x)
        bern = self._bern
        lp = Y[:, bern] @ log_expit(z[bern]) + (1.0 - Y[:, bern]) @ log_expit(-z[bern])
        if self.emotion_exclusive:
            ext = self._emotion_ext_logprobs(z)
            Ye = Y[:, self._emo]
            n_emo = Ye.sum(axis=1)
            with np.errstate(invalid="ignore"):
                emo_lp = np.where(n_emo == 0, ext[0], Ye @ ext[1:])
            lp = lp + np.where(n_emo <= 1, emo_lp, -np.inf)
        return lp

    def log_prob(self, x: np.ndarray, y) -> float:
        """Exact log pi(y | x); -inf for responses with several emotions under the exclusive mask."""
        return float(self.log_prob_many(x, y)[0])

    def logit_scores(self, x: np.ndarray, Y) -> np.ndarray:
        """d log pi(y|x) / d z for each row of ``Y``; K x V."""
        Y = self._as_indicators(Y)
        z = self.logits(x)
        G = Y - expit(z)
        if self.emotion_exclusive:
            G[:, self._emo] = Y[:, self._emo] - np.exp(self._emotion_ext_logprobs(z)[1:])
        return G

    def expand_grad(self, x: np.ndarray, dz: np.ndarray) -> np.ndarray:
        """Chain logit gradients (K x V) through z = x W + b into flat theta gradients."""
        dz = np.atleast_2d(dz)
        gW = np.einsum("f,kv->kfv", np.asarray(x, dtype=np.float64), dz).reshape(dz.shape[0], -1)
        return np.concatenate([gW, dz], axis=1)

    def log_prob_grad_many(self, x: np.ndarray, Y) -> np.ndarray:
        return self.expand_grad(x, self.logit_scores(x, Y))

    def log_prob_grad(self, x: np.ndarray, y) -> np.ndarray:
        return self.log_prob_grad_many(x, y)[0]

    def sample(self, x: np.ndarray, K: int, seed: SeedLike = None) -> np.ndarray:
        """K independent indicator draws (K x V)."""
        if K < 1:
            raise ValueError("K must be >= 1")
        rng = _rng(seed)
        z = self.logits(x)
        u = rng.random((K, self.n_tokens))
        Y = (u < expit(z)).astype(np.float64)
        if self.emotion_exclusive:
            Y[:, self._emo] = 0.0
            cdf = np.cumsum(np.exp(self._emotion_ext_logprobs(z)))
            pick = np.minimum(np.searchsorted(cdf, u[:, self._emo.start] * cdf[-1], side="right"), cdf.size - 1)
            rows = np.nonzero(pick > 0)[0]
            Y[rows, self._emo.start + pick[rows] - 1] = 1.0
        return Y

    def greedy(self, x: np.ndarray) -> np.ndarray:
        """Most probable response (exact mode of the factorized distribution)."""
        self.logits(x)
        return self.greedy_many(np.asarray(x, dtype=np.float64)[None, :])[0]

    def greedy_many(self, X: np.ndarray) -> np.ndarray:
        Z = np.asarray(X, dtype=np.float64) @ self.W + self.b
        Y = (Z > 0).astype(np.float64)
        if self.emotion_exclusive:
            emo = self._emo
            Y[:, emo] = 0.0
            ext = np.concatenate([np.zeros((Z.shape[0], 1)), Z[:, emo]], axis=1)
            k = np.argmax(ext, axis=1)
            rows = np.nonzero(k > 0)[0]
            Y[rows, emo.start + k[rows] - 1] = 1.0
        return Y


def sample_candidates(policy: ToyPolicy, x: np.ndarray, K: int, seed: SeedLike = None) -> list[StructuredResponse]:
    return [StructuredResponse.from_indicator(y, policy.vocab) for y in policy.sample(x, K, seed)]


def log_prob(policy: ToyPolicy, x: np.ndarray, y) -> float:
    return policy.log_prob(x, y)


def log_prob_grad(policy: ToyPolicy, x: np.ndarray, y) -> np.ndarray:
    return policy.log_prob_grad(x, y)


def _bernoulli_kl(zp: np.ndarray, zq: np.ndarray) -> np.ndarray:
    p = expit(zp)
    return p * (log_expit(zp) - log_expit(zq)) + (1.0 - p) * (log_expit(-zp) - log_expit(-zq))


def kl_divergence(p: ToyPolicy, q: ToyPolicy, x: np.ndarray) -> float:
    """KL[p(.|x) || q(.|x)] summed exactly over the factorized token distributions."""
    return kl_and_grad(p, q, x)[0]


def kl_and_grad(p: ToyPolicy, q: ToyPolicy, x: np.ndarray) -> tuple[float, np.ndarray]:
    """KL and its gradient with respect to ``p``'s flat parameters."""
    if p.vocab != q.vocab or p.emotion_exclusive != q.emotion_exclusive:
        raise ValueError("policies must share vocabulary and emotion masking")
    zp, zq = p.logits(x), q.logits(x)
    bern = p._bern
    kl = float(np.sum(_bernoulli_kl(zp[bern], zq[bern])))
    dz = np.zeros_like(zp)
    pp = expit(zp[bern])
    # d KL_bern / d zp = p (1 - p) (zp - zq)
    dz[bern] = pp * (1.0 - pp) * (zp[bern] - zq[bern])
    if p.emotion_exclusive:
        lp, lq = p._emotion_ext_logprobs(zp), q._emotion_ext_logprobs(zq)
        pi = np.exp(lp)
        kl_e = float(np.sum(pi * (lp - lq)))
        kl += kl_e
        dz[p._emo] = pi[1:] * ((lp - lq)[1:] - kl_e)
    return max(kl, 0.0), p.expand_grad(x, dz)[0]


class ValueBaseline:
    """Linear value model b(x) = x . w + c."""

    def __init__(self, n_features: int):
        self.n_features = n_features
        self.theta = np.zeros(n_features + 1)

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(x @ self.theta[:-1] + self.theta[-1])

    def grad(self, x: np.ndarray, target: float) -> np.ndarray:
        """Gradient of (b(x) - target)^2 with respect to theta."""
        return 2.0 * (self(x) - target) * np.append(np.asarray(x, dtype=np.float64), 1.0)


def baseline_update(baseline: ValueBaseline, features: np.ndarray, target: float, lr: float) -> ValueBaseline:
    if not np.isfinite(target):
        raise ValueError("baseline target must be finite")
    baseline.theta = baseline.theta - lr * baseline.grad(features, target)
    return baseline
