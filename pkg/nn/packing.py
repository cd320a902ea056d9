"""
Packed batches: B padded sequences flattened to B*T rows, kept apart by attention masks
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PackedSequences:
    ids: np.ndarray        # [B*T] token ids
    positions: np.ndarray  # [B*T] position inside its own sequence
    sequence: np.ndarray   # [B*T] index of the owning sequence
    valid: np.ndarray      # [B*T] False on padding
    batch: int
    length: int

    @property
    def rows(self) -> int:
        return self.batch * self.length


def pack(tokens, pad_id: int = 0) -> PackedSequences:
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    batch, length = tokens.shape
    return PackedSequences(
        ids=tokens.reshape(-1),
        positions=np.tile(np.arange(length), batch),
        sequence=np.repeat(np.arange(batch), length),
        valid=(tokens != pad_id).reshape(-1),
        batch=batch,
        length=length,
    )


def attention_mask(query: PackedSequences, key: PackedSequences, causal: bool = False) -> np.ndarray:
    """
    Same sequence, non-pad key, and (causal) no look-ahead

    Rows with no admissible key come out all False; attention gives them a zero context.
    """
    allowed = (query.sequence[:, None] == key.sequence[None, :]) & key.valid[None, :]
    if causal:
        allowed &= key.positions[None, :] <= query.positions[:, None]
    return allowed
