"""Synthetic annotation datasets over the facial vocabulary.

Informative samples get their ground truth from a hidden linear rule over
the features (the same functional form as the policy, so a planted policy
reproduces it exactly).  Noise samples get ground truth drawn uniformly,
independent of the features.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import norm

from ..algorithm import ConfigError, SampleRecord
from ..policy import ToyPolicy
from ..reward import CHANNELS, StructuredResponse, Vocabulary, read_annotations, write_annotations


@dataclass
class SyntheticDatasetSpec:
    n_samples: int = 512
    informative_fraction: float = 0.3
    n_features: int = 16
    seed: int = 0
    vocab_per_channel: Optional[int] = 8
    corpus_rates: bool = True
    emotion_exclusive: bool = True
    sphere_features: bool = True

    def __post_init__(self):
        if not 0.0 <= self.informative_fraction <= 1.0:
            raise ConfigError(f"informative_fraction: must lie in [0, 1] (got {self.informative_fraction})")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples: must be positive (got {self.n_samples})")
        if self.n_features < 1:
            raise ConfigError(f"n_features: must be positive (got {self.n_features})")

    def vocabulary(self) -> Vocabulary:
        if self.vocab_per_channel is None:
            return Vocabulary.full()
        return Vocabulary.trimmed(self.vocab_per_channel)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticDataset:
    spec: SyntheticDatasetSpec
    vocab: Vocabulary
    records: list[SampleRecord]
    rule_W: np.ndarray
    rule_b: np.ndarray

    @property
    def informative_ids(self) -> list[str]:
        return [r.id for r in self.records if r.informative]

    def features(self) -> np.ndarray:
        return np.stack([r.x for r in self.records])

    def oracle_policy(self, sharpness: float = 50.0) -> ToyPolicy:
        """A policy whose greedy response reproduces the hidden rule exactly."""
        pol = ToyPolicy(self.vocab, self.spec.n_features, emotion_exclusive=self.spec.emotion_exclusive)
        pol.W[...] = sharpness * self.rule_W
        pol.b[...] = sharpness * self.rule_b
        return pol


def _rule_truth(x: np.ndarray, W: np.ndarray, b: np.ndarray, vocab: Vocabulary, exclusive: bool) -> np.ndarray:
    z = x @ W + b
    y = (z > 0).astype(np.float64)
    if exclusive:
        emo = vocab.slices()["emotion"]
        y[emo] = 0.0
        ext = np.concatenate([[0.0], z[emo]])
        k = int(np.argmax(ext))
        if k > 0:
            y[emo.start + k - 1] = 1.0
    return y


def generate_dataset(spec: SyntheticDatasetSpec, s_init: float = 0.5) -> SyntheticDataset:
    rng = np.random.default_rng(spec.seed)
    vocab = spec.vocabulary()
    V, f = len(vocab), spec.n_features
    W = rng.normal(size=(f, V)) / np.sqrt(f)
    if spec.corpus_rates:
        rates = np.clip(vocab.base_rates(), 0.02, 0.98)
        b = np.linalg.norm(W, axis=0) * norm.ppf(rates)
    else:
        b = np.zeros(V)
    n_inf = int(round(spec.informative_fraction * spec.n_samples))
    informative = np.zeros(spec.n_samples, dtype=bool)
    informative[rng.permutation(spec.n_samples)[:n_inf]] = True
    X = rng.normal(size=(spec.n_samples, f))
    if spec.sphere_features:
        # constant norm sqrt(f) keeps per-sample gradient scale out of the utility
        X *= np.sqrt(f) / np.linalg.norm(X, axis=1, keepdims=True)
    emo = vocab.slices()["emotion"]
    n_emo = emo.stop - emo.start
    records = []
    for i in range(spec.n_samples):
        if informative[i]:
            y = _rule_truth(X[i], W, b, vocab, spec.emotion_exclusive)
        else:
            y = (rng.random(V) < 0.5).astype(np.float64)
            if spec.emotion_exclusive:
                y[emo] = 0.0
                k = int(rng.integers(0, n_emo + 1))
                if k > 0:
                    y[emo.start + k - 1] = 1.0
        records.append(SampleRecord(f"s{i:05d}", X[i], StructuredResponse.from_indicator(y, vocab),
                                    s=s_init, informative=bool(informative[i])))
    return SyntheticDataset(spec, vocab, records, W, b)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(ds: SyntheticDataset, out_dir) -> dict[str, Path]:
    """Write vocabulary.tsv, annotations.tsv and features.tsv into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"vocabulary": out / "vocabulary.tsv", "annotations": out / "annotations.tsv",
             "features": out / "features.tsv"}
    ds.vocab.save(paths["vocabulary"])
    write_annotations(paths["annotations"], {r.id: r.truth for r in ds.records})
    lines = [f"{r.id}\t{int(r.informative)}\t" + ",".join(_fmt(v) for v in r.x) + "\n" for r in ds.records]
    paths["features"].write_text("".join(lines))
    return paths


def read_dataset(in_dir, s_init: float = 0.5) -> tuple[Vocabulary, list[SampleRecord]]:
    d = Path(in_dir)
    vocab = Vocabulary.load(d / "vocabulary.tsv")
    rows = []
    for lineno, line in enumerate((d / "features.tsv").read_text().splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"features.tsv:{lineno}: expected 'sample_id<TAB>informative<TAB>f1,f2,...'")
        rows.append((parts[0], parts[1] == "1", np.array([float(v) for v in parts[2].split(",")])))
    truths = read_annotations(d / "annotations.tsv", vocab, [sid for sid, _, _ in rows])
    return vocab, [SampleRecord(sid, x, truths[sid], s=s_init, informative=inf) for sid, inf, x in rows]


__all__ = ["CHANNELS", "SyntheticDataset", "SyntheticDatasetSpec", "generate_dataset", "read_dataset",
           "write_dataset"]
