"""
Dense-Jacobian checks of how the error gradient factorizes through residual units

Pre-norm:  dx_L/dx_l = I + sum_k dF(LN(x_k))/dx_l
Post-norm: dx_L/dx_l = prod_k J_LN(summed_k) (I + dF(x_k)/dx_k), top unit leftmost
"""
import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from autodiff import JacobianTooLarge, Tensor, fresh_graph, jacobian, relative_error
from model import NormPlacement, UnitTrace, residual_unit
from nn import (
    AttentionConfig,
    FeedForward,
    LayerNorm,
    Module,
    MultiHeadAttention,
    feed_forward,
    multi_head_attention,
)

logger = logging.getLogger(__name__)

MAX_WIDTH = 4
MAX_DEPTH = 4
MAX_ROWS = 2
TOLERANCE = 1e-6


class FactorizationGuard(JacobianTooLarge):
    """Refusal to build a stack too large for dense Jacobians"""


@dataclass
class FactorizationCheck:
    placement: NormPlacement
    depth: int
    assembled_jacobian: np.ndarray     # for the bottom unit input x_0
    end_to_end_jacobian: np.ndarray
    max_rel_error: float               # over every starting unit l
    forward_residual: float = 0.0      # pre-norm only: max |x_L - x_l - sum F|

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


class TinyStack(Module):
    """Residual units alternating single-head attention and feed-forward over a [t, d] input"""

    def __init__(self, placement: NormPlacement, depth: int, d_model: int, rows: int, seed: int = 0, zero_branches: bool = False):
        if d_model > MAX_WIDTH or depth > MAX_DEPTH or rows > MAX_ROWS:
            raise FactorizationGuard(
                f"factorization check needs d <= {MAX_WIDTH}, depth <= {MAX_DEPTH}, t <= {MAX_ROWS}; "
                f"got d={d_model}, depth={depth}, t={rows}"
            )
        if min(d_model, depth, rows) < 1:
            raise ValueError("d, depth and t must be positive")
        self.placement = NormPlacement(placement)
        self.depth = depth
        self.d_model = d_model
        self.rows = rows
        rng = np.random.default_rng(seed)
        self.attention_cfg = AttentionConfig(d_model, 1)
        self.sublayers: List[Module] = []
        self.norms = [LayerNorm(f"unit{k}.ln", d_model) for k in range(depth)]
        for k in range(depth):
            if k % 2 == 0:
                self.sublayers.append(MultiHeadAttention(f"unit{k}.attn", self.attention_cfg, rng))
            else:
                self.sublayers.append(FeedForward(f"unit{k}.ffn", d_model, 2 * d_model, rng))
        if zero_branches:
            for sub in self.sublayers:
                out = sub.output if isinstance(sub, MultiHeadAttention) else sub.outer
                out.weight.data[...] = 0.0
                out.bias.data[...] = 0.0
        self.input = Tensor(rng.normal(size=(rows, d_model)), requires_grad=True)
        self.mask = np.ones((rows, rows), dtype=bool)

    def _branch(self, k: int):
        sub = self.sublayers[k]
        if isinstance(sub, MultiHeadAttention):
            return lambda z: multi_head_attention(z, z, z, self.mask, self.attention_cfg, sub)
        return lambda z: feed_forward(z, sub)

    def forward(self) -> List[UnitTrace]:
        trace: List[UnitTrace] = []
        x = self.input
        for k in range(self.depth):
            x = residual_unit(x, self._branch(k), self.placement, self.norms[k], trace=trace)
        return trace


def _identity(n: int) -> np.ndarray:
    return np.eye(n)


def check_prenorm_factorization(depth: int = 2, d_model: int = 4, rows: int = 2, seed: int = 0, zero_branches: bool = False) -> FactorizationCheck:
    """Compare the end-to-end Jacobian of a pre-norm stack with I plus the summed branch Jacobians"""
    stack = TinyStack(NormPlacement.PRE, depth, d_model, rows, seed, zero_branches)
    n = d_model * rows
    with fresh_graph() as graph:
        trace = stack.forward()
        top = trace[-1].output
        errors, residual = [], 0.0
        assembled = end_to_end = None
        for l in range(depth):
            x_l = trace[l].input
            direct = jacobian(top, x_l)
            summed = _identity(n)
            for k in range(l, depth):
                summed = summed + jacobian(trace[k].branch, x_l)
            errors.append(relative_error(summed, direct))
            branches = sum(trace[k].branch.data for k in range(l, depth))
            residual = max(residual, float(np.max(np.abs(top.data - x_l.data - branches))))
            if l == 0:
                assembled, end_to_end = summed, direct
        graph.release()
    check = FactorizationCheck(NormPlacement.PRE, depth, assembled, end_to_end, max(errors), residual)
    logger.info(f"pre-norm factorization depth={depth} d={d_model}: max rel error {check.max_rel_error:.3e}")
    return check


def check_postnorm_factorization(depth: int = 2, d_model: int = 4, rows: int = 2, seed: int = 0, zero_branches: bool = False) -> FactorizationCheck:
    """Compare the end-to-end Jacobian of a post-norm stack with the per-unit interleaved product"""
    stack = TinyStack(NormPlacement.POST, depth, d_model, rows, seed, zero_branches)
    n = d_model * rows
    with fresh_graph() as graph:
        trace = stack.forward()
        top = trace[-1].output
        factors = [
            jacobian(unit.output, unit.summed) @ (_identity(n) + jacobian(unit.branch, unit.input))
            for unit in trace
        ]
        errors = []
        assembled = end_to_end = None
        for l in range(depth):
            direct = jacobian(top, trace[l].input)
            product = _identity(n)
            for k in range(l, depth):
                product = factors[k] @ product
            errors.append(relative_error(product, direct))
            if l == 0:
                assembled, end_to_end = product, direct
        graph.release()
    check = FactorizationCheck(NormPlacement.POST, depth, assembled, end_to_end, max(errors))
    logger.info(f"post-norm factorization depth={depth} d={d_model}: max rel error {check.max_rel_error:.3e}")
    return check


def check_factorization(placement, depth: int = 2, d_model: int = 4, rows: int = 2, seed: int = 0) -> FactorizationCheck:
    if NormPlacement(placement) is NormPlacement.PRE:
        return check_prenorm_factorization(depth, d_model, rows, seed)
    return check_postnorm_factorization(depth, d_model, rows, seed)
