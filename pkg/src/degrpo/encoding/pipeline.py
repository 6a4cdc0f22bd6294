"""The full low/mid/high stack wired together, with parameter groups for staged training."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..numerics import ParamTensor, Tensor, add, as_tensor, mean_pool_rows, sum_squares, sub
from .blocks import (
    CA2Chain,
    FusionWeights,
    LayerFeatureStack,
    QueryAggregator,
    WeightAdapter,
    adapter_score,
    ca2_forward,
    fuse,
    fused_visual,
    qformer_forward,
)

PARAM_GROUPS = ("encoders", "aggregator", "adapters")


@dataclass
class EncoderInput:
    """One example: prompt tokens (L x d), facial block features, general-stream tokens (L_g x d)."""

    prompt: np.ndarray
    facial: LayerFeatureStack
    general: np.ndarray


@dataclass
class EncoderOutput:
    fused: Tensor
    facial_tokens: Tensor
    general_tokens: Tensor
    score_general: Tensor
    score_facial: Tensor
    weights: FusionWeights


class HierarchicalEncoder:
    """Facial CA2 chain -> two query aggregators -> two adapters -> fused tokens.

    All token widths equal ``dim``.  The adapters see the prompt through its
    mean-pooled vector repeated once per aggregated token, since they need
    text and visual tokens of identical shape.
    """

    def __init__(self, layer_dims: Sequence[int], dim: int, n_queries: int = 8,
                 rng: Optional[np.random.Generator] = None, shared_kv: bool = False,
                 adapter_hidden: Optional[int] = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.dim = dim
        self.n_queries = n_queries
        self.chain = CA2Chain(layer_dims, dim, dim, rng, shared_kv=shared_kv, prefix="ca2")
        self.agg_general = QueryAggregator(n_queries, dim, rng, prefix="qformer_general")
        self.agg_facial = QueryAggregator(n_queries, dim, rng, prefix="qformer_facial")
        self.adapter_general = WeightAdapter(dim, rng, hidden=adapter_hidden, prefix="adapter_general")
        self.adapter_facial = WeightAdapter(dim, rng, hidden=adapter_hidden, prefix="adapter_facial")

    def groups(self) -> dict[str, list[ParamTensor]]:
        return {
            "encoders": self.chain.parameters(),
            "aggregator": self.agg_general.parameters() + self.agg_facial.parameters(),
            "adapters": self.adapter_general.parameters() + self.adapter_facial.parameters(),
        }

    def parameters(self) -> list[ParamTensor]:
        return [p for group in self.groups().values() for p in group]

    def named_parameters(self) -> dict[str, ParamTensor]:
        return {p.name: p for p in self.parameters()}

    def text_tokens(self, prompt, n_rows: int) -> Tensor:
        return add(np.zeros((n_rows, self.dim)), mean_pool_rows(prompt))

    def forward(self, x: EncoderInput) -> EncoderOutput:
        prompt = as_tensor(x.prompt)
        facial_dense = ca2_forward(prompt, x.facial, self.chain)
        v_f = qformer_forward(prompt, facial_dense, self.agg_facial)
        v_g = qformer_forward(prompt, x.general, self.agg_general)
        t = self.text_tokens(prompt, self.n_queries)
        s_g = adapter_score(v_g, t, self.adapter_general)
        s_f = adapter_score(v_f, t, self.adapter_facial)
        w = fuse(s_g, s_f)
        return EncoderOutput(fused_visual(v_g, v_f, w), v_f, v_g, s_g, s_f, w)

    def loss(self, x: EncoderInput, target: Optional[np.ndarray] = None) -> Tensor:
        """Sum of squares of the fused output, or of its residual against ``target``."""
        fused = self.forward(x).fused
        return sum_squares(fused if target is None else sub(fused, target))
