"""
Numerical oracles: central finite differences and dense Jacobians
"""
import logging
from typing import Callable

import numpy as np

from .tensor import Tensor, fresh_graph, gradients, no_grad

logger = logging.getLogger(__name__)

JACOBIAN_LIMIT = 10 ** 6


class NonFiniteError(FloatingPointError):
    """A non-finite value showed up while probing a coordinate"""

    def __init__(self, coordinate, message: str):
        self.coordinate = coordinate
        super().__init__(f"{message} at coordinate {coordinate}")


class JacobianTooLarge(ValueError):
    pass


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor), entrywise"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """
    Compare autodiff gradients of a scalar function against central differences

    Args:
        f: maps a tensor shaped like x to a scalar tensor
        x: evaluation point
        eps: perturbation size

    Returns:
        Maximum relative error over coordinates
    """
    point = Tensor(x.data, requires_grad=True)
    with fresh_graph():
        out = f(point)
        if not np.isfinite(out.data).all():
            raise NonFiniteError((), "non-finite function value")
        analytic = gradients(out, [point])[0]

    base = x.data.astype(np.float64)
    numeric = np.zeros_like(base)
    with no_grad():
        for index in np.ndindex(base.shape):
            shifted = base.copy()
            shifted[index] += eps
            upper = f(Tensor(shifted)).item()
            shifted[index] -= 2.0 * eps
            lower = f(Tensor(shifted)).item()
            if not (np.isfinite(upper) and np.isfinite(lower)):
                raise NonFiniteError(index, "non-finite perturbed value")
            numeric[index] = (upper - lower) / (2.0 * eps)
    if not np.isfinite(analytic).all():
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(analytic))[0])
        raise NonFiniteError(bad, "non-finite analytic gradient")

    error = relative_error(analytic, numeric)
    logger.debug(f"finite-difference check over {base.size} coordinates: {error:.3e}")
    return error


def jacobian(output: Tensor, wrt: Tensor) -> np.ndarray:
    """Dense [size(output), size(wrt)] matrix; row i is the gradient of output coordinate i"""
    if output.size * wrt.size > JACOBIAN_LIMIT:
        raise JacobianTooLarge(
            f"jacobian of {output.size}x{wrt.size} exceeds the {JACOBIAN_LIMIT} entry limit"
        )
    rows = np.zeros((output.size, wrt.size))
    for i in range(output.size):
        seed = np.zeros(output.size)
        seed[i] = 1.0
        rows[i] = gradients(output, [wrt], seed.reshape(output.shape))[0].reshape(-1)
    return rows
