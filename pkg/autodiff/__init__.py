"""
Tensor arithmetic with reverse-mode differentiation
"""
from .tensor import (
    Graph,
    GraphError,
    Parameter,
    ShapeError,
    Tensor,
    backward,
    fresh_graph,
    gradients,
    no_grad,
)
from .checks import (
    JACOBIAN_LIMIT,
    JacobianTooLarge,
    NonFiniteError,
    finite_difference_check,
    jacobian,
    relative_error,
)
from . import ops

__all__ = [
    'Graph',
    'GraphError',
    'Parameter',
    'ShapeError',
    'Tensor',
    'backward',
    'fresh_graph',
    'gradients',
    'no_grad',
    'JACOBIAN_LIMIT',
    'JacobianTooLarge',
    'NonFiniteError',
    'finite_difference_check',
    'jacobian',
    'relative_error',
    'ops',
]
