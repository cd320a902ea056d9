"""
Aggregation weight heatmaps read from checkpoints
"""
import csv
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

STACKS = ("encoder", "decoder")
WEIGHT_NAME = re.compile(r"^(encoder|decoder)\.dlcl\.(\d+)\.(\d+)$")
ABSOLUTE_FLOOR = 0.1
ROW_FRACTION = 0.05


class NotAggregatedError(ValueError):
    """The checkpoint carries no aggregation weights"""


@dataclass(frozen=True)
class HeatmapCell:
    source: int   # producer layer k
    target: int   # consuming layer l+1
    weight: float
    masked: bool
    stack: str = "encoder"


def mask_row(weights: Sequence[float]) -> List[bool]:
    """A weight is masked when |w| < 0.1 or |w| < 5% of the row's largest |w|"""
    magnitudes = np.abs(np.asarray(weights, dtype=np.float64))
    if magnitudes.size == 0:
        return []
    threshold = max(ABSOLUTE_FLOOR, ROW_FRACTION * float(magnitudes.max()))
    return [bool(m < threshold) for m in magnitudes]


def weight_tables(arrays: Mapping[str, np.ndarray]) -> Dict[str, Dict[int, Dict[int, float]]]:
    """side -> consumer row -> producer -> weight"""
    tables: Dict[str, Dict[int, Dict[int, float]]] = {}
    for name, array in arrays.items():
        match = WEIGHT_NAME.match(name)
        if match is None:
            continue
        side, target, source = match.group(1), int(match.group(2)), int(match.group(3))
        tables.setdefault(side, {}).setdefault(target, {})[source] = float(np.asarray(array).reshape(-1)[0])
    if not tables:
        raise NotAggregatedError("checkpoint has no aggregation weights; train with a DLCL aggregation mode")
    return tables


def heatmap(table: Dict[int, Dict[int, float]], stack: str = "encoder") -> List[HeatmapCell]:
    cells = []
    for target in sorted(table):
        row = table[target]
        sources = sorted(row)
        flags = mask_row([row[k] for k in sources])
        cells.extend(HeatmapCell(k, target, row[k], flag, stack) for k, flag in zip(sources, flags))
    return cells


def stack_heatmaps(tables: Mapping[str, Dict[int, Dict[int, float]]]) -> List[HeatmapCell]:
    """Encoder cells then decoder cells, one table for the whole model"""
    cells = []
    for stack in STACKS:
        if stack in tables:
            cells.extend(heatmap(tables[stack], stack))
    return cells


def producer_view(table: Dict[int, Dict[int, float]], producer: int, stack: str = "encoder") -> List[HeatmapCell]:
    """Weights every later consumer row gives to y_producer, masked with its own row's rule"""
    cells = [cell for cell in heatmap(table, stack) if cell.source == producer]
    if not cells:
        raise ValueError(f"no {stack} consumer row reads layer {producer}")
    return cells


def write_heatmap_csv(cells: Sequence[HeatmapCell], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["stack", "from", "to", "weight", "masked"])
        for cell in cells:
            writer.writerow([cell.stack, cell.source, cell.target, repr(cell.weight), int(cell.masked)])
    logger.info(f"wrote {len(cells)} heatmap cells to {path}")
    return path
