"""
Command handlers package
"""
from .status import EXIT_OK, EXIT_USAGE, EXIT_DIVERGED
from .checkpoint_handler import CheckpointHandler, model_from_checkpoint
from .train_handler import TrainHandler, AblationHandler, ABLATION_MODES, write_run_config
from .probe_handler import ProbeHandler, FactorizationHandler
from .weights_handler import WeightsHandler
from .decode_handler import DecodeHandler, DecodeInputError, read_sources

__all__ = [
    'EXIT_OK',
    'EXIT_USAGE',
    'EXIT_DIVERGED',
    'CheckpointHandler',
    'model_from_checkpoint',
    'TrainHandler',
    'AblationHandler',
    'ABLATION_MODES',
    'write_run_config',
    'ProbeHandler',
    'FactorizationHandler',
    'WeightsHandler',
    'DecodeHandler',
    'DecodeInputError',
    'read_sources'
]
