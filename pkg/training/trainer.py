"""
Training loop: gradient accumulation, warmup schedule, Adam, checkpoints, divergence detection
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from autodiff import backward, ops
from model import DlclTransformer, ForwardContext, sequence_loss
from .checkpoint import average_checkpoints, checkpoint_from_model, save_checkpoint
from .optim import Adam, NonFiniteGradient
from .schedule import SchedulerConfig, lr_at
from .tasks import Batch, TaskSpec, TaskStream

logger = logging.getLogger(__name__)

METRICS_HEADER = ["step", "loss", "token_acc", "lr", "grad_norm"]
DIVERGENCE_FRACTION = 0.2


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    accumulation: int = 1
    batch_tokens: int = 256
    seed: int = 0
    label_smoothing: float = 0.1
    checkpoint_every: int = 200
    keep_checkpoints: int = 5
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.accumulation < 1:
            raise ValueError(f"accumulation must be >= 1, got {self.accumulation}")
        if self.checkpoint_every < 1 or self.keep_checkpoints < 1:
            raise ValueError("checkpoint_every and keep_checkpoints must be >= 1")


@dataclass
class StepMetrics:
    step: int
    loss: float
    token_acc: float
    lr: float
    grad_norm: float


@dataclass
class AccumulatedStep:
    loss: float
    tokens: int
    correct: int

    @property
    def token_acc(self) -> float:
        return self.correct / self.tokens if self.tokens else 0.0


@dataclass
class TrainResult:
    metrics: List[StepMetrics] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)
    diverged: bool = False
    reason: Optional[str] = None
    initial_loss: Optional[float] = None
    average_path: Optional[Path] = None

    @property
    def final(self) -> Optional[StepMetrics]:
        return self.metrics[-1] if self.metrics else None


def accumulate_gradients(
    micro_batches: Sequence[Batch],
    model: DlclTransformer,
    label_smoothing: float = 0.1,
    ctx: Optional[ForwardContext] = None,
) -> AccumulatedStep:
    """
    Backpropagate each micro-batch's loss weighted by its share of target tokens,
    so the summed gradient is that of the concatenated batch's per-token mean loss.
    Gradients add onto whatever the parameters already hold.
    """
    if not micro_batches:
        raise ValueError("accumulate_gradients needs at least one micro-batch")
    total_tokens = sum(b.tokens for b in micro_batches)
    params = model.parameters()
    loss_sum, correct = 0.0, 0
    for batch in micro_batches:
        result = sequence_loss(model, batch.src, batch.tgt_in, batch.tgt_out, label_smoothing, ctx)
        backward(ops.scale(result.loss, result.tokens / total_tokens), params)
        loss_sum += result.loss.item() * result.tokens
        correct += result.correct
    return AccumulatedStep(loss_sum / total_tokens, total_tokens, correct)


def gradient_norm(params) -> float:
    return float(math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)))


def divergence_reason(losses: Sequence[float], steps: int) -> Optional[str]:
    """
    Non-finite loss, or, once 20% of the updates have run, a trailing mean loss
    (window of 5% of the updates) above the first update's loss
    """
    step = len(losses)
    if not math.isfinite(losses[-1]):
        return f"non-finite loss at step {step}"
    if step > 1 and step >= DIVERGENCE_FRACTION * steps:
        window = losses[-max(1, math.ceil(0.05 * steps)):]
        recent = sum(window) / len(window)
        if recent > losses[0]:
            return f"mean loss {recent:.4f} above initial {losses[0]:.4f} at step {step}"
    return None


class MetricsLog:
    """CSV step,loss,token_acc,lr,grad_norm written as training goes"""

    def __init__(self, path: Path):
        self.path = path
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            csv.writer(f).writerow(METRICS_HEADER)

    def append(self, m: StepMetrics):
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow(
                [m.step, f"{m.loss:.12g}", f"{m.token_acc:.12g}", f"{m.lr:.12g}", f"{m.grad_norm:.12g}"]
            )


def _checkpoint_path(output_dir: Path, step: int) -> Path:
    return output_dir / f"checkpoint_{step:06d}.ckpt"


def train_loop(
    model: DlclTransformer,
    task: TaskSpec,
    sched: SchedulerConfig,
    optimizer: Adam,
    train: TrainConfig,
    output_dir: Path,
    on_step: Optional[Callable[[StepMetrics], None]] = None,
) -> TrainResult:
    """
    Run train.steps optimizer updates, each accumulating train.accumulation micro-batches

    Returns:
        TrainResult with the metrics log, retained checkpoints and divergence verdict
    """
    output_dir = Path(output_dir)
    stream = TaskStream(task, train.batch_tokens)
    dropout_rng = np.random.default_rng(train.seed + 1)
    ctx = ForwardContext(training=True, rng=dropout_rng)
    log = MetricsLog(output_dir / "metrics.csv")
    result = TrainResult()
    params = model.parameters()

    def keep(step: int):
        path = save_checkpoint(checkpoint_from_model(model, step), _checkpoint_path(output_dir, step))
        result.checkpoints.append(path)
        while len(result.checkpoints) > train.keep_checkpoints:
            result.checkpoints.pop(0).unlink(missing_ok=True)

    keep(0)
    for step in range(1, train.steps + 1):
        lr = lr_at(step, sched)
        optimizer.zero_grad()
        micro = [next(stream) for _ in range(train.accumulation)]
        accumulated = accumulate_gradients(micro, model, train.label_smoothing, ctx)
        norm = gradient_norm(params)
        metrics = StepMetrics(step, accumulated.loss, accumulated.token_acc, lr, norm)
        if result.initial_loss is None:
            result.initial_loss = accumulated.loss

        reason = divergence_reason([m.loss for m in result.metrics] + [metrics.loss], train.steps)
        if reason is None:
            try:
                optimizer.step(lr)
            except NonFiniteGradient as e:
                reason = f"step {step} aborted: {e}"
        result.metrics.append(metrics)
        log.append(metrics)
        if on_step is not None:
            on_step(metrics)
        if reason is not None:
            result.diverged, result.reason = True, reason
            logger.warning(f"training diverged: {reason}")
            break

        if step % train.log_every == 0 or step == train.steps:
            logger.info(f"step {step}: loss {metrics.loss:.4f} acc {metrics.token_acc:.4f} lr {lr:.3e} |g| {norm:.3e}")
        if step % train.checkpoint_every == 0 or step == train.steps:
            keep(step)

    trained = [p for p in result.checkpoints if p != _checkpoint_path(output_dir, 0)]
    if not result.diverged and trained:
        result.average_path = save_checkpoint(average_checkpoints(trained), output_dir / "average.ckpt")
    return result
