"""Prompt-guided encoding blocks at toy scale.

Low level: a chain of cross-attention steps over projected per-block
features, each step's output becoming the next step's query.  Mid level:
a learnable-query aggregator.  High level: text-conditioned scalar
adapters and a two-way softmax fusion of the two visual streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..numerics import (
    DimensionError,
    ParamTensor,
    Tensor,
    add,
    as_tensor,
    gelu,
    glorot,
    layer_norm,
    matmul,
    mean_pool_rows,
    mul,
    row_softmax,
    scale,
    softmax_pair,
    transpose,
)


class ParamContainer:
    """Anything owning named :class:`ParamTensor` attributes."""

    def parameters(self) -> list[ParamTensor]:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, ParamTensor]:
        return {p.name: p for p in self.parameters()}


@dataclass
class LayerFeatureStack:
    """Per-block features, layer i of shape P_i x D_i (time flattened into rows)."""

    layers: list[np.ndarray]

    def __post_init__(self):
        self.layers = [np.asarray(f, dtype=np.float64) for f in self.layers]
        if not self.layers:
            raise ValueError("a layer feature stack needs at least one layer")
        for i, f in enumerate(self.layers):
            if f.ndim != 2 or min(f.shape) < 1:
                raise DimensionError(f"layer {i} must be a non-empty P x D matrix, got {f.shape}")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> list[int]:
        return [f.shape[1] for f in self.layers]


class CA2Chain(ParamContainer):
    """Projections into a shared width plus per-step key/value maps.

    ``shared_kv=True`` reuses one W_K / W_V pair across every step.
    """

    def __init__(self, layer_dims: Sequence[int], shared_dim: int, text_dim: int,
                 rng: np.random.Generator, shared_kv: bool = False, prefix: str = "ca2"):
        if not layer_dims:
            raise ValueError("CA2Chain needs at least one layer")
        self.shared_dim = shared_dim
        self.text_dim = text_dim
        self.shared_kv = shared_kv
        self.projections = [glorot(f"{prefix}.proj{i}", d_i, shared_dim, rng)
                            for i, d_i in enumerate(layer_dims)]
        self.w_q = glorot(f"{prefix}.w_q", text_dim, shared_dim, rng)
        n_kv = 1 if shared_kv else len(layer_dims)
        self.w_k = [glorot(f"{prefix}.w_k{i}", shared_dim, shared_dim, rng) for i in range(n_kv)]
        self.w_v = [glorot(f"{prefix}.w_v{i}", shared_dim, shared_dim, rng) for i in range(n_kv)]

    @property
    def n_layers(self) -> int:
        return len(self.projections)

    def kv(self, i: int) -> tuple[ParamTensor, ParamTensor]:
        j = 0 if self.shared_kv else i
        return self.w_k[j], self.w_v[j]

    def parameters(self) -> list[ParamTensor]:
        return [*self.projections, self.w_q, *self.w_k, *self.w_v]


def project_layer(stack: LayerFeatureStack, i: int, chain: CA2Chain) -> Tensor:
    """Map layer ``i`` (0-based) into the chain's shared width.  No bias."""
    if not 0 <= i < stack.n_layers:
        raise IndexError(f"layer index {i} out of range for a stack of {stack.n_layers}")
    if i >= chain.n_layers:
        raise IndexError(f"chain has no projection for layer {i}")
    return matmul(stack.layers[i], chain.projections[i])


def cross_attention(q_src, kv_src, w_q: Optional[ParamTensor], w_k: ParamTensor,
                    w_v: ParamTensor) -> Tensor:
    """softmax(Q K^T / sqrt(D)) V with D the key width.

    With ``w_q=None`` the query source is used as Q directly.
    """
    q_src, kv_src = as_tensor(q_src), as_tensor(kv_src)
    q = q_src if w_q is None else matmul(q_src, w_q)
    k = matmul(kv_src, w_k)
    v = matmul(kv_src, w_v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape[-1]} does not match key width {k.shape[-1]}")
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(k.shape[-1]))
    return matmul(row_softmax(scores), v)


def ca2_forward(prompt, stack: LayerFeatureStack, chain: CA2Chain) -> Tensor:
    """Progressive aggregation: the prompt queries layer 0, then each output queries the next layer."""
    if stack.n_layers == 0:
        raise ValueError("empty layer stack")
    prompt = as_tensor(prompt)
    if prompt.data.ndim != 2 or prompt.shape[0] < 1:
        raise DimensionError(f"prompt must be an L x d matrix, got {prompt.shape}")
    e = None
    for i in range(stack.n_layers):
        w_k, w_v = chain.kv(i)
        feats = project_layer(stack, i, chain)
        if i == 0:
            e = cross_attention(prompt, feats, chain.w_q, w_k, w_v)
        else:
            e = cross_attention(e, feats, None, w_k, w_v)
    return e


class QueryAggregator(ParamContainer):
    """M learnable query rows that cross-attend over visual tokens."""

    def __init__(self, n_queries: int, dim: int, rng: np.random.Generator, prefix: str = "qformer"):
        if n_queries < 1:
            raise ValueError("n_queries must be >= 1")
        self.n_queries = n_queries
        self.dim = dim
        self.queries = glorot(f"{prefix}.queries", n_queries, dim, rng)
        self.w_q = glorot(f"{prefix}.w_q", dim, dim, rng)
        self.w_k = glorot(f"{prefix}.w_k", dim, dim, rng)
        self.w_v = glorot(f"{prefix}.w_v", dim, dim, rng)

    def parameters(self) -> list[ParamTensor]:
        return [self.queries, self.w_q, self.w_k, self.w_v]


def qformer_forward(prompt, visual, agg: QueryAggregator) -> Tensor:
    # queries are conditioned by adding the mean-pooled prompt to every row
    prompt, visual = as_tensor(prompt), as_tensor(visual)
    if visual.data.ndim != 2 or visual.shape[0] < 1:
        raise DimensionError(f"visual tokens must be an L x d matrix, got {visual.shape}")
    q = add(agg.queries, mean_pool_rows(prompt))
    return cross_attention(q, visual, agg.w_q, agg.w_k, agg.w_v)


class WeightAdapter(ParamContainer):
    """Text-conditioned scorer emitting one scalar per (visual, text) pair."""

    def __init__(self, dim: int, rng: np.random.Generator, hidden: Optional[int] = None,
                 prefix: str = "adapter"):
        h = dim if hidden is None else hidden
        self.dim, self.hidden = dim, h
        self.w_q = glorot(f"{prefix}.w_q_text", dim, dim, rng)
        self.w_k = glorot(f"{prefix}.w_k_visual", dim, dim, rng)
        self.w_v = glorot(f"{prefix}.w_v_visual", dim, dim, rng)
        self.ln_gain = ParamTensor(f"{prefix}.ln_gain", np.ones(dim))
        self.ln_bias = ParamTensor(f"{prefix}.ln_bias", np.zeros(dim))
        self.w1 = glorot(f"{prefix}.w1", dim, h, rng)
        self.b1 = glorot(f"{prefix}.b1", dim, h, rng, shape=(h,))
        self.w2 = glorot(f"{prefix}.w2", h, h, rng)
        self.b2 = glorot(f"{prefix}.b2", h, h, rng, shape=(h,))
        self.w = glorot(f"{prefix}.w", h, 1, rng, shape=(h,))
        self.b = glorot(f"{prefix}.b", h, 1, rng, shape=())

    def parameters(self) -> list[ParamTensor]:
        return [self.w_q, self.w_k, self.w_v, self.ln_gain, self.ln_bias,
                self.w1, self.b1, self.w2, self.b2, self.w, self.b]


def adapter_score(v, t, a: WeightAdapter) -> Tensor:
    v, t = as_tensor(v), as_tensor(t)
    if v.shape != t.shape:
        raise DimensionError(f"visual {v.shape} and text {t.shape} tokens must both be L x d")
    if v.shape[1] != a.dim:
        raise DimensionError(f"adapter width {a.dim} does not match token width {v.shape[1]}")
    q = matmul(t, a.w_q)
    k = matmul(v, a.w_k)
    vv = matmul(v, a.w_v)
    attn = row_softmax(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(a.dim)))
    h = matmul(attn, vv)
    v_tilde = layer_norm(add(v, h), a.ln_gain, a.ln_bias)
    v_global = mean_pool_rows(v_tilde)
    h1 = gelu(add(matmul(v_global, a.w1), a.b1))
    h2 = gelu(add(matmul(h1, a.w2), a.b2))
    return add(matmul(h2, a.w), a.b)


@dataclass
class FusionWeights:
    general: Tensor
    facial: Tensor

    def values(self) -> tuple[float, float]:
        return float(self.general), float(self.facial)


def fuse(s_g, s_f) -> FusionWeights:
    wg, wf = softmax_pair(as_tensor(s_g), as_tensor(s_f))
    return FusionWeights(wg, wf)


def fused_visual(v_g, v_f, w: FusionWeights) -> Tensor:
    v_g, v_f = as_tensor(v_g), as_tensor(v_f)
    if v_g.shape != v_f.shape:
        raise DimensionError(f"streams must share a shape, got {v_g.shape} and {v_f.shape}")
    return add(mul(w.general, v_g), mul(w.facial, v_f))
