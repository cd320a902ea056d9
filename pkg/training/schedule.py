"""
Linear warmup followed by inverse-square-root decay
"""
import math
from dataclasses import dataclass


@dataclass(frozen=True)
class SchedulerConfig:
    lr_max: float = 1e-3
    warmup: int = 4000
    lr_init: float = 1e-7

    def __post_init__(self):
        if self.warmup < 1:
            raise ValueError(f"warmup must be >= 1, got {self.warmup}")
        if not self.lr_init < self.lr_max:
            raise ValueError(f"lr_init ({self.lr_init}) must be below lr_max ({self.lr_max})")


def lr_at(step: int, cfg: SchedulerConfig) -> float:
    """Learning rate for optimizer update number step (1-based)"""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    if step < cfg.warmup:
        return cfg.lr_init + (cfg.lr_max - cfg.lr_init) * step / cfg.warmup
    return cfg.lr_max * math.sqrt(cfg.warmup / step)
