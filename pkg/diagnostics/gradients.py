"""
Per-layer gradient norms: the vanishing-gradient evidence for deep post-norm stacks
"""
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from autodiff import fresh_graph, gradients
from model import DlclTransformer, ForwardContext, ModelConfig, NormPlacement, sequence_loss
from training import Batch, TaskSpec, generate_task_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientReport:
    norms: Tuple[float, ...]   # index 0: ||dE/dy_0|| (embedding); index l: ||dE/dx_l||
    bottom_top_ratio: float
    loss: float
    divergent: bool
    seed: int
    config: Dict = field(default_factory=dict)

    @property
    def layers(self) -> int:
        return len(self.norms) - 1

    @property
    def embedding_norm(self) -> float:
        return self.norms[0]


def probe_gradient_norms(model: DlclTransformer, batch: Batch, seed: int = 0, label_smoothing: float = 0.1) -> GradientReport:
    """One forward and backward with dropout off; records ||dE/dx_l|| for every encoder layer input"""
    with fresh_graph() as graph:
        result = sequence_loss(model, batch.src, batch.tgt_in, batch.tgt_out, label_smoothing, ForwardContext(training=False))
        trace = result.encoded.trace
        grads = gradients(result.loss, [trace.y[0]] + trace.x)
        graph.release()

    norms = tuple(float(np.linalg.norm(g)) for g in grads)
    loss = result.loss.item()
    divergent = not math.isfinite(loss) or not all(math.isfinite(n) for n in norms)
    top = norms[-1]
    ratio = norms[1] / top if top > 0 else float("inf")
    report = GradientReport(norms, ratio, loss, divergent, seed, model.cfg.to_dict())
    logger.info(
        f"{model.cfg.norm.value}-norm L={report.layers}: embedding |g| {report.embedding_norm:.3e}, "
        f"bottom/top {ratio:.3e}{' (divergent)' if divergent else ''}"
    )
    return report


def export_report_csv(report: GradientReport, path) -> Path:
    """layer,grad_norm rows; layer 0 is the embedding; '# divergent' footer when flagged"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "grad_norm"])
        for layer, norm in enumerate(report.norms):
            writer.writerow([layer, repr(norm)])
        if report.divergent:
            f.write("# divergent\n")
    return path


def read_report_csv(path) -> Tuple[List[float], bool]:
    norms, divergent = [], False
    with open(path, newline="") as f:
        for line in f.read().splitlines()[1:]:
            if line.startswith("#"):
                divergent = divergent or line.strip() == "# divergent"
                continue
            _, value = line.split(",")
            norms.append(float(value))
    return norms, divergent


@dataclass(frozen=True)
class SweepRow:
    placement: str
    depth: int
    seed: int
    embedding_grad_norm: float
    bottom_top_ratio: float


def sweep_gradient_norms(
    base: ModelConfig,
    placements: Sequence[NormPlacement],
    depths: Sequence[int],
    seeds: Sequence[int],
    task: TaskSpec,
    batch_tokens: int = 128,
) -> List[SweepRow]:
    """Probe freshly initialized models over a placement x depth x seed grid"""
    rows = []
    for placement in placements:
        for depth in depths:
            cfg = replace(base, norm=NormPlacement(placement), encoder_depth=depth)
            for seed in seeds:
                batch = generate_task_batch(replace(task, seed=seed), batch_tokens, np.random.default_rng(seed))
                report = probe_gradient_norms(DlclTransformer(cfg, seed=seed), batch, seed)
                rows.append(SweepRow(cfg.norm.value, depth, seed, report.embedding_norm, report.bottom_top_ratio))
    return rows


def summarize_sweep(rows: Sequence[SweepRow]) -> Dict[Tuple[str, int], Tuple[float, float]]:
    """Seed-averaged (embedding norm, bottom/top ratio) per (placement, depth)"""
    groups: Dict[Tuple[str, int], List[SweepRow]] = {}
    for row in rows:
        groups.setdefault((row.placement, row.depth), []).append(row)
    return {
        key: (
            float(np.mean([r.embedding_grad_norm for r in group])),
            float(np.mean([r.bottom_top_ratio for r in group])),
        )
        for key, group in groups.items()
    }


def export_sweep_csv(rows: Sequence[SweepRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["placement", "depth", "seed", "embedding_grad_norm", "bottom_top_ratio"])
        for r in rows:
            writer.writerow([r.placement, r.depth, r.seed, repr(r.embedding_grad_norm), repr(r.bottom_top_ratio)])
    return path
