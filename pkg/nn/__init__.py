"""
Transformer primitive layers and the training loss
"""
from .module import Module
from .layers import (
    AttentionConfig,
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    causal_mask,
    embed,
    feed_forward,
    layer_norm,
    linear,
    multi_head_attention,
    positional_encoding,
)
from .loss import NoTokensError, SmoothingConfig, label_smoothed_cross_entropy, smoothed_targets, token_accuracy
from .packing import PackedSequences, attention_mask, pack

__all__ = [
    'Module',
    'AttentionConfig',
    'Embedding',
    'FeedForward',
    'LayerNorm',
    'Linear',
    'MultiHeadAttention',
    'causal_mask',
    'embed',
    'feed_forward',
    'layer_norm',
    'linear',
    'multi_head_attention',
    'positional_encoding',
    'NoTokensError',
    'SmoothingConfig',
    'label_smoothed_cross_entropy',
    'smoothed_targets',
    'token_accuracy',
    'PackedSequences',
    'attention_mask',
    'pack',
]
