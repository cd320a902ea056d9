"""
Label-smoothed cross-entropy
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from autodiff import Tensor, ops


class NoTokensError(ValueError):
    """Every target position is padding"""


@dataclass(frozen=True)
class SmoothingConfig:
    epsilon_ls: float
    vocab_size: int
    pad_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon_ls < 1.0:
            raise ValueError(f"epsilon_ls must be in [0, 1), got {self.epsilon_ls}")
        if not 0 <= self.pad_id < self.vocab_size:
            raise ValueError(f"pad_id {self.pad_id} outside vocabulary of {self.vocab_size}")


def smoothed_targets(targets: np.ndarray, cfg: SmoothingConfig) -> np.ndarray:
    """q = (1 - eps) * onehot + eps / V, zero rows on padding"""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    q = np.full((targets.size, cfg.vocab_size), cfg.epsilon_ls / cfg.vocab_size)
    q[np.arange(targets.size), targets] += 1.0 - cfg.epsilon_ls
    q[targets == cfg.pad_id] = 0.0
    return q


def label_smoothed_cross_entropy(logits: Tensor, targets, cfg: SmoothingConfig) -> Tuple[Tensor, int]:
    """Mean over non-pad tokens of -sum_i q_i log p_i; returns (loss, token count)"""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape != (targets.size, cfg.vocab_size):
        raise ValueError(
            f"logits shape {list(logits.shape)} does not match {targets.size} targets over {cfg.vocab_size} classes"
        )
    tokens = int(np.count_nonzero(targets != cfg.pad_id))
    if tokens == 0:
        raise NoTokensError("batch contains no non-pad target tokens")
    q = Tensor(smoothed_targets(targets, cfg))
    total = ops.sum_all(ops.mul(q, ops.log_softmax(logits)))
    return ops.scale(total, -1.0 / tokens), tokens


def token_accuracy(logits: Tensor, targets, pad_id: int = 0) -> Tuple[int, int]:
    """(correct, counted) argmax predictions over non-pad positions"""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    keep = targets != pad_id
    predicted = logits.data.argmax(axis=-1)
    return int(np.count_nonzero(predicted[keep] == targets[keep])), int(np.count_nonzero(keep))
