import numpy as np
import pytest
from parameterized import parameterized

from hydraens.errors import ContractError, DimensionError, NumericalError
from hydraens.numerics import (GradTape, Tensor, backward, get_precision,
                               numerical_gradient, ops, precision,
                               set_precision)


def check_grad(f, *arrays, eps=1e-6, tol=1e-6):
    '''Compares tape gradients of ``sum(f(*tensors) * weights)`` with
    central differences'''
    rng = np.random.default_rng(7)
    tensors = [Tensor(a) for a in arrays]
    out = f(*tensors)
    weights = Tensor(rng.standard_normal(out.shape))

    with GradTape() as tape:
        tape.watch(*tensors)
        loss = ops.sum_all(ops.mul(f(*tensors), weights))
    grads = backward(loss, tape)

    for i, t in enumerate(tensors):
        arr = t.numpy()

        def scalar():
            args = list(tensors)
            args[i] = Tensor(arr)
            return float((f(*args).data * weights.data).sum())
        expected = numerical_gradient(scalar, arr, eps)
        np.testing.assert_allclose(grads[t].data, expected, atol=tol,
                                   rtol=tol)


rng = np.random.default_rng(0)


@parameterized.expand([
    ('matmul', lambda a, b: ops.matmul(a, b),
     (rng.standard_normal((3, 4)), rng.standard_normal((4, 2)))),
    ('batched_matmul', lambda a, b: ops.matmul(a, b),
     (rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 2)))),
    ('add_broadcast', lambda a, b: ops.add(a, b),
     (rng.standard_normal((3, 4)), rng.standard_normal((4,)))),
    ('mul', lambda a, b: ops.mul(a, b),
     (rng.standard_normal((3, 4)), rng.standard_normal((3, 4)))),
    ('softmax', lambda a: ops.softmax_rows(a),
     (rng.standard_normal((3, 5)),)),
    ('log_softmax', lambda a: ops.log_softmax(a),
     (rng.standard_normal((3, 5)),)),
    ('gelu', lambda a: ops.gelu(a), (rng.standard_normal((4, 3)),)),
    ('layernorm', lambda x, g, b: ops.layernorm(x, g, b),
     (rng.standard_normal((2, 3, 4)), rng.standard_normal(4),
      rng.standard_normal(4))),
    ('take', lambda a: ops.take(a, [[0, 2], [2, 1]]),
     (rng.standard_normal((3, 4)),)),
    ('concat', lambda a, b: ops.concat([a, b], axis=-1),
     (rng.standard_normal((2, 3)), rng.standard_normal((2, 1)))),
    ('split_heads', lambda a: ops.split_heads(a, 2),
     (rng.standard_normal((3, 6)),)),
    ('rows_to_cols', lambda a: ops.rows_to_cols(a, 2),
     (rng.standard_normal((4, 3)),)),
    ('mean_axis0', lambda a: ops.mean_axis0(a),
     (rng.standard_normal((3, 2, 2)),)),
])
def test_gradients_match_finite_differences(_, f, arrays):
    with precision('verify'):
        check_grad(f, *arrays)


def test_cross_entropy_gradient():
    logits = np.random.default_rng(1).standard_normal((5, 3))
    labels = [0, 2, 1, 1, 0]
    check_grad(lambda x: ops.cross_entropy(x, labels), logits)


def test_cross_entropy_value():
    logits = Tensor([[0.0, 0.0], [np.log(3.0), 0.0]])
    loss = ops.cross_entropy(logits, [0, 1]).item()
    assert loss == pytest.approx((np.log(2) + np.log(4)) / 2)


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(2).standard_normal((4, 7)) * 50)
    np.testing.assert_allclose(ops.softmax_rows(x).data.sum(axis=-1), 1.0)


def test_heads_round_trip():
    x = Tensor(np.arange(24.0).reshape(2, 12))
    y = ops.merge_heads(ops.split_heads(x, 3))
    np.testing.assert_array_equal(x.data, y.data)
    assert ops.split_heads(x, 3).shape == (4, 2, 3)


def test_rows_to_cols_layout():
    x = Tensor(np.arange(8.0).reshape(4, 2))
    y = ops.rows_to_cols(x, 2)
    np.testing.assert_array_equal(y.data, [[0, 1, 4, 5], [2, 3, 6, 7]])
    np.testing.assert_array_equal(ops.cols_to_rows(y, 2).data, x.data)


@parameterized.expand([
    ('inner', lambda: ops.matmul(Tensor(np.ones((2, 3))),
                                 Tensor(np.ones((2, 3))))),
    ('rank', lambda: ops.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 1))))),
    ('broadcast', lambda: ops.add(Tensor(np.ones((2, 3))),
                                  Tensor(np.ones((2, 2))))),
    ('layernorm', lambda: ops.layernorm(Tensor(np.ones((2, 3))),
                                        Tensor(np.ones(2)),
                                        Tensor(np.zeros(3)))),
    ('heads', lambda: ops.split_heads(Tensor(np.ones((2, 5))), 2)),
    ('members', lambda: ops.rows_to_cols(Tensor(np.ones((3, 2))), 2)),
    ('empty_concat', lambda: ops.concat([])),
])
def test_dimension_errors(_, f):
    with pytest.raises(DimensionError):
        f()


def test_take_out_of_range():
    with pytest.raises(IndexError):
        ops.take(Tensor(np.ones((3, 2))), [0, 3])


def test_label_out_of_range():
    with pytest.raises(IndexError):
        ops.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


def test_non_finite_result():
    with pytest.raises(NumericalError):
        ops.scale(Tensor([1.0, 2.0]), np.inf)


def test_dimension_error_is_value_error():
    with pytest.raises(ValueError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_backward_needs_scalar():
    w = Tensor(np.ones((2, 2)))
    with GradTape() as tape:
        tape.watch(w)
        y = ops.scale(w, 2.0)
    with pytest.raises(ContractError):
        backward(y, tape)


def test_unused_parameter_gets_zero_gradient():
    w, v = Tensor(np.ones(3)), Tensor(np.ones((2, 2)))
    with GradTape() as tape:
        tape.watch(w, v)
        loss = ops.sum_all(ops.scale(w, 3.0))
    grads = backward(loss, tape)
    np.testing.assert_array_equal(grads[w].data, [3.0, 3.0, 3.0])
    np.testing.assert_array_equal(grads[v].data, np.zeros((2, 2)))


def test_shared_input_accumulates():
    w = Tensor([2.0])
    with GradTape() as tape:
        tape.watch(w)
        loss = ops.sum_all(ops.mul(w, w))
    assert backward(loss, tape)[w].item() == pytest.approx(4.0)


def test_untracked_ops_are_not_recorded():
    x = Tensor(np.ones(3))
    with GradTape() as tape:
        ops.scale(x, 2.0)
    assert len(tape) == 0


def test_tensor_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 3.0
    copy = t.numpy()
    copy[0] = 3.0
    assert t.data[0] == 1.0


def test_precision_modes():
    assert get_precision() == 'verify'
    with precision('bench'):
        assert Tensor([1.0]).dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64
    with pytest.raises(ValueError):
        set_precision('half')
