"""
Checkpoint persistence and averaging

File layout (little-endian):
    b"DLCL" | u16 version | 32-byte config hash | u64 step | u32 entry count
    per entry: u16 name length | name (utf-8) | u8 rank | rank x u32 dims | float64 payload
"""
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"DLCL"
FORMAT_VERSION = 1
HASH_BYTES = 32

PathLike = Union[str, os.PathLike]


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    step: int
    config_hash: bytes
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.config_hash) != HASH_BYTES:
            raise CheckpointError(f"config hash must be {HASH_BYTES} bytes, got {len(self.config_hash)}")


def checkpoint_from_model(model, step: int) -> Checkpoint:
    return Checkpoint(step, model.cfg.config_hash(), model.state_dict())


def restore_model(model, ckpt: Checkpoint):
    if ckpt.config_hash != model.cfg.config_hash():
        raise CheckpointError("checkpoint config hash does not match the model configuration")
    try:
        model.load_state_dict(ckpt.arrays)
    except (KeyError, ValueError) as e:
        raise CheckpointError(str(e)) from e


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<H", FORMAT_VERSION), ckpt.config_hash, struct.pack("<QI", ckpt.step, len(ckpt.arrays))]
    for name, array in ckpt.arrays.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(array, dtype="<f8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        chunks.append(array.tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)
    logger.debug(f"saved checkpoint step {ckpt.step} with {len(ckpt.arrays)} arrays to {path}")
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        (version,) = struct.unpack_from("<H", raw, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        offset = 6
        config_hash = raw[offset: offset + HASH_BYTES]
        offset += HASH_BYTES
        step, count = struct.unpack_from("<QI", raw, offset)
        offset += struct.calcsize("<QI")
        arrays = {}
        for _ in range(count):
            (length,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset: offset + length].decode("utf-8")
            offset += length
            (rank,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arrays[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(dims).astype(np.float64)
            offset += 8 * size
    except CheckpointError:
        raise
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated checkpoint ({e})") from e
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return Checkpoint(int(step), config_hash, arrays)


def average_checkpoints(paths: Sequence[PathLike]) -> Checkpoint:
    """Arithmetic mean per named array; step is the largest step"""
    if not paths:
        raise CheckpointError("no checkpoints to average")
    checkpoints = [load_checkpoint(p) for p in paths]
    first = checkpoints[0]
    total = {name: array.copy() for name, array in first.arrays.items()}
    for path, ckpt in zip(paths[1:], checkpoints[1:]):
        if ckpt.config_hash != first.config_hash:
            raise CheckpointError(f"{path}: config hash differs from {paths[0]}")
        if set(ckpt.arrays) != set(total):
            missing = sorted(set(total) ^ set(ckpt.arrays))
            raise CheckpointError(f"{path}: array names differ ({', '.join(missing)})")
        for name, array in ckpt.arrays.items():
            total[name] = total[name] + array
    k = len(checkpoints)
    logger.info(f"averaged {k} checkpoints")
    return Checkpoint(max(c.step for c in checkpoints), first.config_hash, {n: a / k for n, a in total.items()})
