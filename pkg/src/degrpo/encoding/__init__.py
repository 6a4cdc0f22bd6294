from .blocks import (
    CA2Chain,
    FusionWeights,
    LayerFeatureStack,
    QueryAggregator,
    WeightAdapter,
    adapter_score,
    ca2_forward,
    cross_attention,
    fuse,
    fused_visual,
    project_layer,
    qformer_forward,
)
from .checkpoint import CheckpointError, load_model, load_params, save_model, save_params
from .pipeline import PARAM_GROUPS, EncoderInput, EncoderOutput, HierarchicalEncoder

__all__ = [
    "CA2Chain", "CheckpointError", "EncoderInput", "EncoderOutput", "FusionWeights",
    "HierarchicalEncoder", "LayerFeatureStack", "PARAM_GROUPS", "QueryAggregator", "WeightAdapter",
    "adapter_score", "ca2_forward", "cross_attention", "fuse", "fused_visual", "load_model",
    "load_params", "project_layer", "qformer_forward", "save_model", "save_params",
]
