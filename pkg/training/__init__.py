"""
Training harness: schedule, optimizer, synthetic tasks, checkpoints, decoding
"""
from .tasks import (
    BOS_ID,
    EOS_ID,
    FIRST_PAYLOAD_ID,
    PAD_ID,
    Batch,
    TaskKind,
    TaskSpec,
    TaskStream,
    generate_task_batch,
    transform_payload,
)
from .schedule import SchedulerConfig, lr_at
from .optim import Adam, AdamState, NonFiniteGradient, adam_step, beta2_for
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    average_checkpoints,
    checkpoint_from_model,
    load_checkpoint,
    restore_model,
    save_checkpoint,
)
from .decoding import (
    BEAM_PRESETS,
    BeamConfig,
    Hypothesis,
    beam_search_decode,
    greedy_decode,
    length_penalty,
    score,
)
from .trainer import (
    AccumulatedStep,
    StepMetrics,
    TrainConfig,
    TrainResult,
    accumulate_gradients,
    divergence_reason,
    gradient_norm,
    train_loop,
)

__all__ = [
    'BOS_ID',
    'EOS_ID',
    'FIRST_PAYLOAD_ID',
    'PAD_ID',
    'Batch',
    'TaskKind',
    'TaskSpec',
    'TaskStream',
    'generate_task_batch',
    'transform_payload',
    'SchedulerConfig',
    'lr_at',
    'Adam',
    'AdamState',
    'NonFiniteGradient',
    'adam_step',
    'beta2_for',
    'Checkpoint',
    'CheckpointError',
    'average_checkpoints',
    'checkpoint_from_model',
    'load_checkpoint',
    'restore_model',
    'save_checkpoint',
    'BEAM_PRESETS',
    'BeamConfig',
    'Hypothesis',
    'beam_search_decode',
    'greedy_decode',
    'length_penalty',
    'score',
    'AccumulatedStep',
    'StepMetrics',
    'TrainConfig',
    'TrainResult',
    'accumulate_gradients',
    'divergence_reason',
    'gradient_norm',
    'train_loop',
]
