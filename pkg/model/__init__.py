"""
Residual stacks: post-norm / pre-norm units, DLCL aggregation, encoder-decoder model
"""
from .residual import (
    AggregationMode,
    Aggregator,
    DlclWeights,
    NormPlacement,
    UnitTrace,
    dlcl_combine_post,
    dlcl_combine_pre,
    make_weight_preset,
    residual_unit,
    weighted_sum,
)
from .transformer import (
    ActivationTrace,
    DlclTransformer,
    EncoderOutput,
    ForwardContext,
    LossResult,
    ModelConfig,
    decoder_forward,
    encoder_forward,
    run_stack,
    sequence_loss,
)

__all__ = [
    'AggregationMode',
    'Aggregator',
    'DlclWeights',
    'NormPlacement',
    'UnitTrace',
    'dlcl_combine_post',
    'dlcl_combine_pre',
    'make_weight_preset',
    'residual_unit',
    'weighted_sum',
    'ActivationTrace',
    'DlclTransformer',
    'EncoderOutput',
    'ForwardContext',
    'LossResult',
    'ModelConfig',
    'decoder_forward',
    'encoder_forward',
    'run_stack',
    'sequence_loss',
]
