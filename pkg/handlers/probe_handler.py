"""
Gradient diagnostics commands: per-layer norm probes, depth sweeps, factorization checks
"""
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from config import RunConfig
from database import RunRegistry
from diagnostics import (
    FactorizationGuard,
    check_factorization,
    export_report_csv,
    export_sweep_csv,
    probe_gradient_norms,
    summarize_sweep,
    sweep_gradient_norms,
)
from model import NormPlacement
from training import generate_task_batch
from .checkpoint_handler import model_from_checkpoint
from .status import EXIT_OK, EXIT_USAGE

logger = logging.getLogger(__name__)


class ProbeHandler:
    """Handles the probe-grad command"""

    def __init__(self, registry: Optional[RunRegistry] = None):
        self.registry = registry or RunRegistry(enabled=False)

    def probe(self, run_config: RunConfig, checkpoint: Optional[Path] = None) -> int:
        seed = run_config.train.seed
        model = model_from_checkpoint(run_config, checkpoint)
        batch = generate_task_batch(run_config.task, run_config.train.batch_tokens, np.random.default_rng(seed))
        report = probe_gradient_norms(model, batch, seed, run_config.train.label_smoothing)

        path = export_report_csv(report, run_config.output_dir / 'grad_norms.csv')
        run_id = self.registry.start_run('probe-grad', run_config, output_dir=run_config.output_dir)
        self.registry.record_probe(run_id, report)
        self.registry.finish_run(run_id, 'diverged' if report.divergent else 'completed', report.loss)

        print(
            f"{run_config.model.norm.value}-norm L={report.layers}: embedding grad norm {report.embedding_norm:.6e}, "
            f"bottom/top ratio {report.bottom_top_ratio:.6e} -> {path}"
        )
        return EXIT_OK

    def sweep(self, run_config: RunConfig, depths: Sequence[int], seeds: int) -> int:
        rows = sweep_gradient_norms(
            run_config.model,
            (NormPlacement.POST, NormPlacement.PRE),
            depths,
            range(seeds),
            run_config.task,
            run_config.train.batch_tokens,
        )
        path = export_sweep_csv(rows, run_config.output_dir / 'grad_sweep.csv')
        for (placement, depth), (embedding, ratio) in sorted(summarize_sweep(rows).items()):
            print(f"{placement}-norm L={depth}: mean embedding grad norm {embedding:.6e}, mean bottom/top {ratio:.6e}")
        print(f"wrote {path}")
        return EXIT_OK


class FactorizationHandler:
    """Handles the check-factorization command"""

    def run(self, placement: NormPlacement, depth: int, d_model: int = 4, rows: int = 2, seed: int = 0) -> int:
        try:
            check = check_factorization(placement, depth, d_model, rows, seed)
        except FactorizationGuard as e:
            logger.error(f"Refusing factorization check: {e}")
            return EXIT_USAGE
        verdict = "pass" if check.passed else "FAIL"
        print(f"{check.placement.value}-norm depth={depth}: max_rel_error {check.max_rel_error:.3e} {verdict}")
        return EXIT_OK if check.passed else EXIT_USAGE
