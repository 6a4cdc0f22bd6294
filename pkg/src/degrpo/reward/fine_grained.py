"""Per-channel set-F1 similarity and the weighted fine-grained reward."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Collection, Optional

import numpy as np

from .vocabulary import CHANNELS, StructuredResponse, Vocabulary, VocabularyError


def channel_sim(pred: Collection[str], truth: Collection[str],
                allowed: Optional[Collection[str]] = None) -> float:
    """Set F1: 2|pred & truth| / (|pred| + |truth|); two empty sets match perfectly."""
    pred, truth = set(pred), set(truth)
    if allowed is not None:
        allowed = set(allowed)
        for tok in sorted(pred | truth):
            if tok not in allowed:
                raise VocabularyError(f"token {tok!r} is not in the vocabulary")
    if not pred and not truth:
        return 1.0
    return 2.0 * len(pred & truth) / (len(pred) + len(truth))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class ChannelWeights:
    """Softmax-normalized reward weights in channel order attribute, emotion, action."""

    logits: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64).copy()
        if self.logits.shape != (3,) or not np.all(np.isfinite(self.logits)):
            raise ValueError("channel weights need three finite logits")

    @property
    def weights(self) -> np.ndarray:
        return _softmax(self.logits)

    @classmethod
    def from_weights(cls, weights) -> "ChannelWeights":
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (3,) or np.any(w <= 0):
            raise ValueError("weights must be three positive values")
        return cls(np.log(w / w.sum()))


def response_similarities(y: StructuredResponse, truth: StructuredResponse,
                          vocab: Optional[Vocabulary] = None) -> np.ndarray:
    return np.array([
        channel_sim(y.channel(c), truth.channel(c), None if vocab is None else vocab.channel(c))
        for c in CHANNELS
    ])


def fine_grained_reward(y: StructuredResponse, truth: StructuredResponse, alpha: ChannelWeights,
                        vocab: Optional[Vocabulary] = None) -> float:
    return float(response_similarities(y, truth, vocab) @ alpha.weights)


def indicator_similarities(Y: np.ndarray, t: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Vectorized set-F1 for K indicator rows against one truth indicator; returns K x 3."""
    Y = np.atleast_2d(Y)
    out = np.empty((Y.shape[0], len(CHANNELS)))
    for j, sl in enumerate(vocab._slices.values()):
        inter = Y[:, sl] @ t[sl]
        denom = Y[:, sl].sum(axis=1) + t[sl].sum()
        with np.errstate(invalid="ignore", divide="ignore"):
            out[:, j] = np.where(denom > 0, 2.0 * inter / np.where(denom > 0, denom, 1.0), 1.0)
    return out


def paired_similarities(Y: np.ndarray, T: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Row i of ``Y`` against row i of ``T``; returns N x 3."""
    Y, T = np.atleast_2d(Y), np.atleast_2d(T)
    if Y.shape != T.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {T.shape}")
    out = np.empty((Y.shape[0], len(CHANNELS)))
    for j, sl in enumerate(vocab._slices.values()):
        inter = (Y[:, sl] * T[:, sl]).sum(axis=1)
        denom = Y[:, sl].sum(axis=1) + T[:, sl].sum(axis=1)
        out[:, j] = np.where(denom > 0, 2.0 * inter / np.where(denom > 0, denom, 1.0), 1.0)
    return out


def reward_logit_jacobian(alpha: ChannelWeights) -> np.ndarray:
    """d weights / d logits for the softmax parameterization."""
    w = alpha.weights
    return np.diag(w) - np.outer(w, w)


def update_channel_weights(alpha: ChannelWeights, grad, lr: float) -> ChannelWeights:
    """One descent step on the logits; the weights stay on the simplex by construction."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != (3,) or not np.all(np.isfinite(grad)):
        raise ValueError("channel-weight gradient must be three finite values")
    return ChannelWeights(alpha.logits - lr * grad)
