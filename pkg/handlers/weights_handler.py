"""
Aggregation weight export command
"""
import logging
from pathlib import Path
from typing import Optional

from diagnostics import NotAggregatedError, producer_view, stack_heatmaps, weight_tables, write_heatmap_csv
from training import CheckpointError, load_checkpoint
from .status import EXIT_OK, EXIT_USAGE

logger = logging.getLogger(__name__)


class WeightsHandler:
    """Handles the export-weights command"""

    def run(self, checkpoint: Path, output_dir: Path, producer: Optional[int] = None) -> int:
        try:
            tables = weight_tables(load_checkpoint(checkpoint).arrays)
        except (CheckpointError, NotAggregatedError, OSError) as e:
            logger.error(f"Cannot export weights from {checkpoint}: {e}")
            return EXIT_USAGE

        path = write_heatmap_csv(stack_heatmaps(tables), Path(output_dir) / "heatmap.csv")
        rows = ", ".join(f"{side} {len(tables[side])}" for side in sorted(tables))
        print(f"heatmap rows ({rows}) -> {path}")
        if producer is None:
            return EXIT_OK

        cells = []
        for side in (s for s in ("encoder", "decoder") if s in tables):
            try:
                cells.extend(producer_view(tables[side], producer, side))
            except ValueError as e:
                logger.error(f"{side}: {e}")
                return EXIT_USAGE
        path = write_heatmap_csv(cells, Path(output_dir) / f"producer{producer}.csv")
        print(f"weights given to layer {producer} -> {path}")
        return EXIT_OK
