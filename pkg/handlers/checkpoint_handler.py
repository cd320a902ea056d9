"""
Checkpoint averaging command and checkpoint loading shared by other commands
"""
import logging
from pathlib import Path
from typing import Optional, Sequence

from config import RunConfig
from model import DlclTransformer
from training import CheckpointError, average_checkpoints, load_checkpoint, restore_model, save_checkpoint
from .status import EXIT_OK, EXIT_USAGE

logger = logging.getLogger(__name__)


def model_from_checkpoint(run_config: RunConfig, checkpoint: Optional[Path] = None) -> DlclTransformer:
    """Fresh model for the run config, overwritten by the checkpoint when one is given"""
    model = DlclTransformer(run_config.model, seed=run_config.train.seed)
    if checkpoint is not None:
        ckpt = load_checkpoint(checkpoint)
        restore_model(model, ckpt)
        logger.info(f"Restored step {ckpt.step} from {checkpoint}")
    return model


class CheckpointHandler:
    """Handles the avg-ckpt command"""

    def average(self, paths: Sequence[Path], output: Path) -> int:
        try:
            averaged = average_checkpoints(list(paths))
        except (CheckpointError, OSError) as e:
            logger.error(f"Averaging failed: {e}")
            return EXIT_USAGE
        save_checkpoint(averaged, output)
        print(f"averaged {len(paths)} checkpoints -> {output} (step {averaged.step})")
        return EXIT_OK
