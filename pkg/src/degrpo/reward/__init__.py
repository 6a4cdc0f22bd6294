from .fine_grained import (
    ChannelWeights,
    channel_sim,
    fine_grained_reward,
    indicator_similarities,
    paired_similarities,
    response_similarities,
    reward_logit_jacobian,
    update_channel_weights,
)
from .vocabulary import (
    CHANNELS,
    StructuredResponse,
    Vocabulary,
    VocabularyError,
    read_annotations,
    write_annotations,
)

__all__ = [
    "CHANNELS", "ChannelWeights", "StructuredResponse", "Vocabulary", "VocabularyError",
    "channel_sim", "fine_grained_reward", "indicator_similarities", "paired_similarities", "read_annotations",
    "response_similarities", "reward_logit_jacobian", "update_channel_weights", "write_annotations",
]
