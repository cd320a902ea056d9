"""
Kernel set: every op computes its forward value and registers a backward rule.
Shapes are explicit; the only implicit broadcast is multiplication by a scalar.
"""
from typing import Optional, Sequence, Union

import numpy as np

from .tensor import ShapeError, Tensor, make_result

Scalar = Union[float, int, Tensor]


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return make_result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return make_result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a: Tensor, factor: Scalar) -> Tensor:
    """Multiply by a python number or by a one-element tensor (learnable scalars)"""
    if isinstance(factor, Tensor):
        if factor.size != 1:
            raise ShapeError("scalar-mul", a.shape, factor.shape)
        s = factor.data.reshape(-1)[0]
        x = a.data
        return make_result(
            "scalar-mul",
            x * s,
            (a, factor),
            lambda g: (g * s, np.full(factor.shape, np.sum(g * x))),
        )
    c = float(factor)
    return make_result("scalar-mul", a.data * c, (a,), lambda g: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    x, y = a.data, b.data
    return make_result("mul", x * y, (a, b), lambda g: (g * y, g * x))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    x, y = a.data, b.data
    return make_result("matmul", x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return make_result("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError("reshape", a.shape, shape)
    source = a.shape
    return make_result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(source),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    first = tensors[0]
    axis = axis % first.ndim
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            t.shape[i] != first.shape[i] for i in range(first.ndim) if i != axis
        ):
            raise ShapeError("concat", first.shape, t.shape)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_result(
        "concat",
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError("slice_cols", a.shape, (start, stop))

    def rule(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return make_result("slice_cols", a.data[:, start:stop].copy(), (a,), rule)


def gather_rows(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if table.ndim != 2:
        raise ShapeError("row-gather", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = int(ids[(ids < 0) | (ids >= table.shape[0])][0])
        raise IndexError(f"row-gather: id {bad} outside table of {table.shape[0]} rows")

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return make_result("row-gather", table.data[ids], (table,), rule)


def broadcast_rows(vector: Tensor, rows: int) -> Tensor:
    """[d] -> [rows, d]"""
    if vector.ndim != 1:
        raise ShapeError("broadcast_rows", vector.shape)
    return make_result(
        "broadcast_rows",
        np.tile(vector.data, (rows, 1)),
        (vector,),
        lambda g: (g.sum(axis=0),),
    )


def broadcast_cols(vector: Tensor, cols: int) -> Tensor:
    """[t] -> [t, cols]"""
    if vector.ndim != 1:
        raise ShapeError("broadcast_cols", vector.shape)
    return make_result(
        "broadcast_cols",
        np.repeat(vector.data[:, None], cols, axis=1),
        (vector,),
        lambda g: (g.sum(axis=1),),
    )


def relu(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    mask = a.data > 0
    return make_result("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return make_result("exp", y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return make_result("log", np.log(x), (a,), lambda g: (g / x,))


def power(a: Tensor, exponent: float) -> Tensor:
    x, p = a.data, float(exponent)
    return make_result("pow", x ** p, (a,), lambda g: (g * p * x ** (p - 1.0),))


def softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return make_result(
        "softmax",
        y,
        (a,),
        lambda g: (y * (g - np.sum(g * y, axis=-1, keepdims=True)),),
    )


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return make_result(
        "log_softmax",
        out,
        (a,),
        lambda g: (g - p * g.sum(axis=-1, keepdims=True),),
    )


def mean_last(a: Tensor) -> Tensor:
    d = a.shape[-1]
    return make_result(
        "mean",
        a.data.mean(axis=-1),
        (a,),
        lambda g: (np.repeat(g[..., None], d, axis=-1) / d,),
    )


def var_last(a: Tensor) -> Tensor:
    """Population variance over the last axis"""
    d = a.shape[-1]
    centered = a.data - a.data.mean(axis=-1, keepdims=True)
    return make_result(
        "variance",
        (centered ** 2).mean(axis=-1),
        (a,),
        lambda g: (2.0 * centered * g[..., None] / d,),
    )


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return make_result("sum", np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout with a constant mask; identity when rate is 0 or rng is None"""
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return make_result("dropout", a.data * keep, (a,), lambda g: (g * keep,))
