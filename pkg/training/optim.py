"""
Bias-corrected Adam over named parameters
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from autodiff import Parameter
from model import NormPlacement

logger = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    def __init__(self, names: Sequence[str]):
        self.names = list(names)
        super().__init__(f"non-finite gradient in {', '.join(self.names)}")


def beta2_for(norm: NormPlacement) -> float:
    return 0.997 if NormPlacement(norm) is NormPlacement.PRE else 0.98


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float):
    """One update of every trainable parameter; aborts untouched on a non-finite gradient"""
    trainable = [p for p in params if p.trainable]
    bad = [p.name for p in trainable if p.grad is not None and not np.isfinite(p.grad).all()]
    if bad:
        raise NonFiniteGradient(bad)

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for p in trainable:
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(p.name, np.zeros_like(p.data))
        v = state.v.get(p.name, np.zeros_like(p.data))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[p.name], state.v[p.name] = m, v
        p.data = p.data - lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


class Adam:
    def __init__(self, params: Sequence[Parameter], beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-8):
        self.params: List[Parameter] = list(params)
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)

    def step(self, lr: float):
        adam_step(self.params, self.state, lr)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
