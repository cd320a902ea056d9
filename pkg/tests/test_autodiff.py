import numpy as np
import pytest

from autodiff import (
    GraphError,
    JacobianTooLarge,
    NonFiniteError,
    ShapeError,
    Tensor,
    backward,
    finite_difference_check,
    fresh_graph,
    gradients,
    jacobian,
    no_grad,
    ops,
    relative_error,
)

SEEDS = range(10)


def _away_from_zero(x):
    return np.sign(x) * (np.abs(x) + 0.1)


def _weighted(out, weights):
    return ops.sum_all(ops.mul(out, Tensor(weights)))


def _unary_cases():
    """(name, input builder, op) for ops of one tensor"""
    return [
        ("exp", lambda r: r.normal(size=(3, 4)), ops.exp),
        ("log", lambda r: np.abs(r.normal(size=(3, 4))) + 0.5, ops.log),
        ("pow", lambda r: np.abs(r.normal(size=(3, 4))) + 0.5, lambda x: ops.power(x, -0.5)),
        ("relu", lambda r: _away_from_zero(r.normal(size=(3, 4))), ops.relu),
        ("softmax", lambda r: r.normal(size=(3, 4)), ops.softmax),
        ("log_softmax", lambda r: r.normal(size=(3, 4)), ops.log_softmax),
        ("transpose", lambda r: r.normal(size=(3, 4)), ops.transpose),
        ("reshape", lambda r: r.normal(size=(3, 4)), lambda x: ops.reshape(x, (2, 6))),
        ("slice_cols", lambda r: r.normal(size=(3, 4)), lambda x: ops.slice_cols(x, 1, 3)),
        ("scale", lambda r: r.normal(size=(3, 4)), lambda x: ops.scale(x, 2.5)),
        ("mean_last", lambda r: r.normal(size=(3, 4)), ops.mean_last),
        ("var_last", lambda r: r.normal(size=(3, 4)), ops.var_last),
        ("broadcast_rows", lambda r: r.normal(size=4), lambda x: ops.broadcast_rows(x, 3)),
        ("broadcast_cols", lambda r: r.normal(size=3), lambda x: ops.broadcast_cols(x, 4)),
        ("row-gather", lambda r: r.normal(size=(5, 4)), lambda x: ops.gather_rows(x, [0, 3, 3, 1])),
    ]


@pytest.mark.parametrize("name,build,op", _unary_cases(), ids=[c[0] for c in _unary_cases()])
@pytest.mark.parametrize("seed", SEEDS)
def test_unary_ops_match_finite_differences(name, build, op, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(build(rng))
    with no_grad():
        weights = rng.normal(size=op(x).shape)
    assert finite_difference_check(lambda t: _weighted(op(t), weights), x) <= 1e-5


def _binary_cases():
    return [
        ("add", (3, 4), (3, 4), ops.add),
        ("sub", (3, 4), (3, 4), ops.sub),
        ("mul", (3, 4), (3, 4), ops.mul),
        ("matmul", (3, 4), (4, 2), ops.matmul),
        ("concat", (3, 4), (3, 2), lambda a, b: ops.concat([a, b], axis=1)),
        ("scalar-mul", (3, 4), (1,), ops.scale),
    ]


@pytest.mark.parametrize("name,shape_a,shape_b,op", _binary_cases(), ids=[c[0] for c in _binary_cases()])
@pytest.mark.parametrize("seed", SEEDS)
def test_binary_ops_match_finite_differences_in_each_operand(name, shape_a, shape_b, op, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=shape_a))
    b = Tensor(rng.normal(size=shape_b))
    with no_grad():
        weights = rng.normal(size=op(a, b).shape)
    assert finite_difference_check(lambda t: _weighted(op(t, b), weights), a) <= 1e-5
    assert finite_difference_check(lambda t: _weighted(op(a, t), weights), b) <= 1e-5


def test_sum_all_gradient_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(ops.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_dropout_rescales_kept_units_and_routes_gradient_through_mask():
    x = Tensor(np.ones((50, 20)), requires_grad=True)
    out = ops.dropout(x, 0.5, np.random.default_rng(0))
    kept = out.data != 0
    np.testing.assert_allclose(out.data[kept], 2.0)
    backward(ops.sum_all(out))
    np.testing.assert_allclose(x.grad, np.where(kept, 2.0, 0.0))


def test_dropout_is_identity_without_rate_or_rng():
    x = Tensor(np.ones(3))
    assert ops.dropout(x, 0.0, np.random.default_rng(0)) is x
    assert ops.dropout(x, 0.3, None) is x


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError) as info:
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    assert info.value.op == "add"
    assert info.value.shapes == ((2, 3), (3, 2))
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_item_needs_a_single_element():
    assert Tensor(np.array([[2.5]])).item() == 2.5
    with pytest.raises(ShapeError) as info:
        Tensor(np.ones(3)).item()
    assert info.value.op == "item"


def test_gather_out_of_range_raises_index_error():
    with pytest.raises(IndexError):
        ops.gather_rows(Tensor(np.ones((3, 2))), [0, 3])


def test_repeated_use_accumulates_gradient():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    backward(ops.sum_all(ops.add(ops.mul(x, x), x)))
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_backward_consumes_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = ops.sum_all(ops.mul(x, x))
    backward(loss)
    with pytest.raises(GraphError):
        backward(loss)


def test_gradients_leaves_graph_usable():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    hidden = ops.exp(x)
    loss = ops.sum_all(hidden)
    first = gradients(loss, [x, hidden])
    second = gradients(loss, [x])
    np.testing.assert_allclose(first[0], np.exp(x.data))
    np.testing.assert_allclose(first[1], np.ones(2))
    np.testing.assert_array_equal(first[0], second[0])
    backward(loss)
    np.testing.assert_allclose(x.grad, np.exp(x.data))


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError):
        backward(ops.exp(x))


def test_tensors_from_different_graphs_cannot_mix():
    with fresh_graph():
        a = ops.exp(Tensor(np.ones(2), requires_grad=True))
    with fresh_graph():
        b = ops.exp(Tensor(np.ones(2), requires_grad=True))
        with pytest.raises(GraphError):
            ops.add(a, b)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = ops.exp(x)
    assert y.node is None and not y.tracked


def test_jacobian_of_identity_and_linear_map(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    np.testing.assert_array_equal(jacobian(ops.reshape(x, (3,)), x), np.eye(3))

    a = rng.normal(size=(2, 3))
    column = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
    np.testing.assert_allclose(jacobian(ops.matmul(Tensor(a), column), column), a)


def test_jacobian_guard():
    x = Tensor(np.ones(1001), requires_grad=True)
    with pytest.raises(JacobianTooLarge):
        jacobian(ops.exp(x), x)


def test_finite_difference_reports_non_finite_coordinate():
    x = Tensor(np.array([1.0, -1.0]))
    with pytest.raises(NonFiniteError):
        finite_difference_check(lambda t: ops.sum_all(ops.log(t)), x)


def test_relative_error_uses_floor():
    assert relative_error(np.array([0.0]), np.array([1e-12])) == pytest.approx(1e-4)
    assert relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)
