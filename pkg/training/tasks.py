"""
Synthetic sequence tasks standing in for a translation corpus
"""
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Sequence

import numpy as np

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
FIRST_PAYLOAD_ID = 3


class TaskKind(str, Enum):
    COPY = 'copy'
    REVERSE = 'reverse'
    SORT = 'sort'


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind = TaskKind.COPY
    vocab_size: int = 16
    min_len: int = 4
    max_len: int = 12
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'kind', TaskKind(self.kind))
        if self.vocab_size <= FIRST_PAYLOAD_ID:
            raise ValueError(f"vocab_size must exceed {FIRST_PAYLOAD_ID} special ids, got {self.vocab_size}")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError(f"invalid length range [{self.min_len}, {self.max_len}]")


@dataclass
class Batch:
    """Padded id matrices; tgt is framed as bos payload eos"""
    src: np.ndarray
    tgt: np.ndarray

    @property
    def tgt_in(self) -> np.ndarray:
        return self.tgt[:, :-1]

    @property
    def tgt_out(self) -> np.ndarray:
        return self.tgt[:, 1:]

    @property
    def tokens(self) -> int:
        return int(np.count_nonzero(self.tgt_out != PAD_ID))

    @property
    def size(self) -> int:
        return self.src.shape[0]

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple]) -> "Batch":
        """Build from (src payload, tgt payload) pairs"""
        sources = [list(s) for s, _ in pairs]
        targets = [[BOS_ID] + list(t) + [EOS_ID] for _, t in pairs]
        return cls(_pad(sources), _pad(targets))

    @classmethod
    def concat(cls, batches: Sequence["Batch"]) -> "Batch":
        sources = [_strip(row) for b in batches for row in b.src]
        targets = [_strip(row) for b in batches for row in b.tgt]
        return cls(_pad(sources), _pad(targets))


def _pad(rows: List[List[int]]) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, : len(row)] = row
    return out


def _strip(row: np.ndarray) -> List[int]:
    return [int(t) for t in row if t != PAD_ID]


def transform_payload(kind: TaskKind, payload: Sequence[int]) -> List[int]:
    kind = TaskKind(kind)
    if kind is TaskKind.COPY:
        return list(payload)
    if kind is TaskKind.REVERSE:
        return list(reversed(payload))
    return sorted(payload)


def generate_task_batch(spec: TaskSpec, batch_tokens: int, rng: np.random.Generator) -> Batch:
    """Draw sequences until the target side holds at least batch_tokens tokens"""
    pairs, tokens = [], 0
    while not pairs or tokens < batch_tokens:
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        payload = rng.integers(FIRST_PAYLOAD_ID, spec.vocab_size, size=length).tolist()
        pairs.append((payload, transform_payload(spec.kind, payload)))
        tokens += length + 1
    return Batch.from_pairs(pairs)


class TaskStream:
    """Deterministic infinite batch stream for a task"""

    def __init__(self, spec: TaskSpec, batch_tokens: int):
        self.spec = spec
        self.batch_tokens = batch_tokens
        self.rng = np.random.default_rng(spec.seed)

    def __iter__(self) -> Iterator[Batch]:
        return self

    def __next__(self) -> Batch:
        return generate_task_batch(self.spec, self.batch_tokens, self.rng)
