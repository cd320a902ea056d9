"""
Training and ablation commands
Runs the training loop, writes the report and records the run
"""
import csv
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from config import RunConfig
from database import RunRegistry
from model import AggregationMode, DlclTransformer
from training import Adam, TrainResult, train_loop
from .status import EXIT_DIVERGED, EXIT_OK

logger = logging.getLogger(__name__)

ABLATION_MODES = (
    AggregationMode.DLCL_LEARNED,
    AggregationMode.DLCL_LEARNED_NO_LN,
    AggregationMode.DLCL_ALL_ONE,
    AggregationMode.DLCL_AVERAGE,
    AggregationMode.DLCL_AVERAGE_NO_LN,
)


def write_run_config(run_config: RunConfig, path: Path) -> Path:
    """The merged flat values; usable again as --config"""
    values = dict(run_config.to_dict())
    values['output_dir'] = str(values['output_dir'])
    path.write_text(json.dumps(values, indent=2, sort_keys=True) + "\n")
    return path


def write_report(result: TrainResult, path: Path) -> Path:
    final = result.final
    report = {
        'status': 'diverged' if result.diverged else 'completed',
        'reason': result.reason,
        'updates': len(result.metrics),
        'initial_loss': result.initial_loss,
        'final_loss': final.loss if final else None,
        'final_token_acc': final.token_acc if final else None,
        'checkpoints': [p.name for p in result.checkpoints],
        'average_checkpoint': result.average_path.name if result.average_path else None,
    }
    path.write_text(json.dumps(report, indent=2) + "\n")
    return path


class TrainHandler:
    """Handles the train command"""

    def __init__(self, registry: Optional[RunRegistry] = None):
        self.registry = registry or RunRegistry(enabled=False)

    def train(self, run_config: RunConfig, output_dir: Path, command: str = 'train', name: Optional[str] = None) -> TrainResult:
        output_dir.mkdir(parents=True, exist_ok=True)
        write_run_config(run_config, output_dir / 'config.json')
        run_id = self.registry.start_run(command, run_config, name, output_dir)

        model = DlclTransformer(run_config.model, seed=run_config.train.seed)
        optimizer = Adam(model.parameters(), beta2=run_config.beta2)
        cfg = run_config.model
        logger.info(
            f"Training {cfg.norm.value}-norm/{cfg.aggregation.value} model, {cfg.encoder_depth} encoder layers, "
            f"{model.parameter_count()} parameters, {run_config.train.steps} updates"
        )
        result = train_loop(
            model,
            run_config.task,
            run_config.scheduler,
            optimizer,
            run_config.train,
            output_dir,
            on_step=lambda m: self.registry.record_step(run_id, m),
        )
        write_report(result, output_dir / 'report.json')

        final = result.final
        self.registry.finish_run(
            run_id,
            'diverged' if result.diverged else 'completed',
            final.loss if final else None,
            final.token_acc if final else None,
            result.reason,
        )
        return result

    def run(self, run_config: RunConfig, name: Optional[str] = None) -> int:
        result = self.train(run_config, run_config.output_dir, name=name)
        final = result.final
        if result.diverged:
            print(f"diverged: {result.reason}")
            return EXIT_DIVERGED
        if final is not None:
            print(f"completed {final.step} updates: loss {final.loss:.4f}, token accuracy {final.token_acc:.4f}")
        else:
            print("completed 0 updates: initial checkpoint written")
        return EXIT_OK


class AblationHandler:
    """Handles the ablate command: one training run per aggregation variant"""

    def __init__(self, registry: Optional[RunRegistry] = None):
        self.trainer = TrainHandler(registry)

    def run(self, run_config: RunConfig, modes: Sequence[AggregationMode] = ABLATION_MODES) -> int:
        rows: List[list] = []
        for mode in modes:
            mode = AggregationMode(mode)
            variant = replace(
                run_config,
                model=replace(run_config.model, aggregation=mode),
                values={**run_config.values, 'aggregation': mode.value},
            )
            result = self.trainer.train(variant, run_config.output_dir / mode.value, command='ablate', name=mode.value)
            final = result.final
            rows.append([
                mode.value,
                f"{final.loss:.12g}" if final else "",
                f"{final.token_acc:.12g}" if final else "",
                int(result.diverged),
            ])
            logger.info(f"Ablation {mode.value}: {rows[-1][1:]}")

        path = run_config.output_dir / 'ablation.csv'
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['aggregation', 'final_loss', 'final_token_acc', 'diverged'])
            writer.writerows(rows)
        print(f"wrote {path}")
        return EXIT_OK
