"""
Residual units (post-norm / pre-norm) and the dynamic linear combination of layers
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence

import numpy as np

from autodiff import Parameter, Tensor, ops
from nn import LayerNorm, Module, layer_norm

logger = logging.getLogger(__name__)


class NormPlacement(str, Enum):
    POST = 'post'
    PRE = 'pre'


class AggregationMode(str, Enum):
    STANDARD = 'standard'
    DLCL_LEARNED = 'learned'
    DLCL_LEARNED_NO_LN = 'learned-noln'
    DLCL_ALL_ONE = 'all-one'
    DLCL_AVERAGE = 'average'
    DLCL_AVERAGE_NO_LN = 'average-noln'
    RESIDUAL_PASSTHROUGH = 'passthrough'

    @property
    def trainable(self) -> bool:
        return self in (AggregationMode.DLCL_LEARNED, AggregationMode.DLCL_LEARNED_NO_LN)

    @property
    def normalizes(self) -> bool:
        return self in (AggregationMode.DLCL_LEARNED, AggregationMode.DLCL_ALL_ONE, AggregationMode.DLCL_AVERAGE)


@dataclass
class UnitTrace:
    """Values recorded by one residual unit"""
    input: Tensor
    branch: Tensor    # F(x) for post-norm, F(LN(x)) for pre-norm
    summed: Tensor    # x + branch
    output: Tensor    # LN(summed) for post-norm, summed for pre-norm


def residual_unit(
    x: Tensor,
    sublayer: Callable[[Tensor], Tensor],
    norm: NormPlacement,
    ln: LayerNorm,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    trace: Optional[List[UnitTrace]] = None,
) -> Tensor:
    """PostNorm: LN(x + F(x)); PreNorm: x + F(LN(x))"""
    if norm is NormPlacement.PRE:
        branch = ops.dropout(sublayer(layer_norm(x, ln)), dropout, rng)
        summed = ops.add(x, branch)
        out = summed
    else:
        branch = ops.dropout(sublayer(x), dropout, rng)
        summed = ops.add(x, branch)
        out = layer_norm(summed, ln)
    if trace is not None:
        trace.append(UnitTrace(x, branch, summed, out))
    return out


class DlclWeights(Module):
    """Ragged lower-triangular table; rows[l] holds W_k^(l+1) for k = 0..l"""

    def __init__(self, rows: List[List[Parameter]]):
        self.rows = rows

    @property
    def depth(self) -> int:
        return len(self.rows)

    @property
    def scalar_count(self) -> int:
        return sum(len(row) for row in self.rows)

    def row(self, layer: int) -> List[Parameter]:
        return self.rows[layer]

    def values(self) -> List[List[float]]:
        return [[p.item() for p in row] for row in self.rows]


def make_weight_preset(mode: AggregationMode, depth: int, prefix: str = "encoder.dlcl") -> DlclWeights:
    """
    Build the weight table for an aggregation mode

    All-One fixes every entry to 1, Average fixes row l+1 to 1/(l+1),
    passthrough keeps only the newest layer, learned modes start from Average.
    """
    mode = AggregationMode(mode)
    if depth < 1:
        raise ValueError(f"depth must be at least 1, got {depth}")
    if mode is AggregationMode.STANDARD:
        raise ValueError("standard stacking has no aggregation weights")

    rows = []
    for layer in range(depth):
        width = layer + 1
        if mode is AggregationMode.DLCL_ALL_ONE:
            values = [1.0] * width
        elif mode is AggregationMode.RESIDUAL_PASSTHROUGH:
            values = [0.0] * layer + [1.0]
        else:
            values = [1.0 / width] * width
        rows.append([
            Parameter(f"{prefix}.{layer + 1}.{k}", np.array([value]), trainable=mode.trainable)
            for k, value in enumerate(values)
        ])
    return DlclWeights(rows)


def _check_row(outputs: Sequence[Tensor], weights: Sequence[Tensor]):
    if len(weights) != len(outputs):
        raise ValueError(f"aggregation row has {len(weights)} weights for {len(outputs)} layer outputs")


def weighted_sum(outputs: Sequence[Tensor], weights: Sequence[Tensor]) -> Tensor:
    _check_row(outputs, weights)
    total = ops.scale(outputs[0], weights[0])
    for y, w in zip(outputs[1:], weights[1:]):
        total = ops.add(total, ops.scale(y, w))
    return total


def dlcl_combine_pre(outputs: Sequence[Tensor], weights: Sequence[Tensor], lns: Sequence[LayerNorm]) -> Tensor:
    """sum_k W_k LN_k(y_k), one norm per producer"""
    _check_row(outputs, weights)
    if len(lns) < len(outputs):
        raise ValueError(f"{len(lns)} producer norms for {len(outputs)} layer outputs")
    return weighted_sum([layer_norm(y, ln) for y, ln in zip(outputs, lns)], weights)


def dlcl_combine_post(outputs: Sequence[Tensor], weights: Sequence[Tensor], ln: LayerNorm) -> Tensor:
    """LN(sum_k W_k y_k)"""
    return layer_norm(weighted_sum(outputs, weights), ln)


class Aggregator(Module):
    """Produces the input x_(l+1) of every complete layer from y_0..y_l"""

    def __init__(self, prefix: str, mode: AggregationMode, norm: NormPlacement, depth: int, d_model: int, eps: float = 1e-6):
        self.mode = AggregationMode(mode)
        self.norm = NormPlacement(norm)
        self.weights = None if self.mode is AggregationMode.STANDARD else make_weight_preset(self.mode, depth, prefix)
        self.norms: List[LayerNorm] = []
        if self.mode.normalizes:
            # pre-norm: one per producer y_k; post-norm: one per consuming row
            self.norms = [LayerNorm(f"{prefix}.ln{k}", d_model, eps) for k in range(depth)]

    def combine(self, outputs: Sequence[Tensor], layer: int) -> Tensor:
        if self.weights is None:
            return outputs[-1]
        row = self.weights.row(layer)
        if not self.mode.normalizes:
            return weighted_sum(outputs, row)
        if self.norm is NormPlacement.PRE:
            return dlcl_combine_pre(outputs, row, self.norms[: layer + 1])
        return dlcl_combine_post(outputs, row, self.norms[layer])
