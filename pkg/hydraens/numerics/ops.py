'''Differentiable primitives

Every function takes and returns :class:`~hydraens.numerics.Tensor`.
When a :class:`~hydraens.numerics.GradTape` is active the result is
recorded together with its vector-Jacobian product, so
:func:`~hydraens.numerics.backward` can propagate adjoints through it.

Leading batch dimensions are allowed wherever the transformer needs
them; binary ops follow numpy broadcasting and reduce gradients back
to the operand shapes.

'''
import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from hydraens.errors import DimensionError, NumericalError
from hydraens.numerics.tape import current_tape
from hydraens.numerics.tensor import Tensor, as_tensor

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _result(name, arr, parents, vjp):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NumericalError('{} produced non-finite values (shape {})'
                             .format(name, arr.shape))
    out = Tensor.wrap(arr)
    tape = current_tape()
    if tape is not None:
        tape.record(out, parents, vjp)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(name, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError('{}: shapes {} and {} do not broadcast'
                             .format(name, a.shape, b.shape))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError('matmul needs operands of rank >= 2: {} @ {}'
                             .format(a.shape, b.shape))
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError('matmul: inner dimensions differ: {} @ {}'
                             .format(a.shape, b.shape))
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError('matmul: batch dimensions differ: {} @ {}'
                             .format(a.shape, b.shape))

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result('matmul', out, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result('add', a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('sub', a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result('sub', a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _result('mul', a.data * b.data, (a, b), vjp)


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)

    def vjp(g):
        return (g * c,)

    return _result('scale', x.data * c, (x,), vjp)


def swap_last(x: Tensor) -> Tensor:
    "Transposes the last two axes."
    x = as_tensor(x)

    def vjp(g):
        return (np.swapaxes(g, -1, -2),)

    return _result('swap_last', np.swapaxes(x.data, -1, -2), (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError('cannot reshape {} into {}'
                             .format(x.shape, shape))

    def vjp(g):
        return (g.reshape(x.shape),)

    return _result('reshape', out, (x,), vjp)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    '''Gathers ``indices`` along ``axis``

    Used for embedding lookups and for slicing head blocks out of
    projection matrices. Repeated indices accumulate in the gradient.

    '''
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim
    n = x.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError('index {} out of range ([0, {}))'
                         .format(int(idx.max() if idx.max() >= n
                                     else idx.min()), n))
    out = np.take(x.data, idx, axis=axis)

    def vjp(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        moved = np.moveaxis(gx, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)),
                         list(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        return (gx,)

    return _result('take', out, (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError('concat needs at least one tensor')
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError('concat: shapes {} disagree off axis {}'
                             .format([t.shape for t in tensors], axis))
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result('concat', out, tuple(tensors), vjp)


def softmax_rows(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError('softmax needs a non-empty last axis: {}'
                             .format(x.shape))
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result('softmax_rows', y, (x,), vjp)


def log_softmax(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse

    def vjp(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _result('log_softmax', y, (x,), vjp)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor,
              eps: float = 1e-5) -> Tensor:
    '''Normalizes the last axis, then applies ``gamma`` and ``beta``

    The variance is the biased (population) one.

    '''
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError('layernorm: gamma {} and beta {} must be ({},)'
                             .format(gamma.shape, beta.shape, d))
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    with np.errstate(divide='ignore', invalid='ignore'):
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result('layernorm', out, (x, gamma, beta), vjp)


def gelu(x: Tensor) -> Tensor:
    "Exact GELU, ``x * Phi(x)``."
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _result('gelu', x.data * cdf, (x,), vjp)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    '''Mean negative log-likelihood of integer ``labels`` under ``logits``

    ``logits`` is N×C. The result is a scalar tensor.

    '''
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError('cross_entropy: logits {} and labels {} disagree'
                             .format(logits.shape, labels.shape))
    n, c = logits.shape
    if n == 0:
        raise DimensionError('cross_entropy on an empty batch')
    if labels.min() < 0 or labels.max() >= c:
        raise IndexError('label out of range ([0, {}))'.format(c))
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def vjp(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _result('cross_entropy', np.asarray(loss, dtype=logits.dtype),
                   (logits,), vjp)


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def vjp(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result('sum_all', np.asarray(x.data.sum()), (x,), vjp)


def mean_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def vjp(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return _result('mean_all', np.asarray(x.data.mean()), (x,), vjp)


def mean_axis0(xs: Tensor) -> Tensor:
    "Mean over the first axis, e.g. of stacked member weights."
    xs = as_tensor(xs)
    n = xs.shape[0]

    def vjp(g):
        return (np.broadcast_to(g / n, xs.shape).copy(),)

    return _result('mean_axis0', xs.data.mean(axis=0), (xs,), vjp)


def split_heads(x: Tensor, d_head: int) -> Tensor:
    '''``(..., T, H*d_head)`` to ``(..., H, T, d_head)``'''
    x = as_tensor(x)
    width = x.shape[-1]
    if width % d_head:
        raise DimensionError('width {} is not a multiple of head dim {}'
                             .format(width, d_head))
    h = width // d_head
    lead = x.shape[:-1]
    out = np.swapaxes(x.data.reshape(lead + (h, d_head)), -2, -3)

    def vjp(g):
        return (np.swapaxes(g, -2, -3).reshape(x.shape),)

    return _result('split_heads', out, (x,), vjp)


def merge_heads(x: Tensor) -> Tensor:
    '''``(..., H, T, d_head)`` to ``(..., T, H*d_head)``'''
    x = as_tensor(x)
    h, t, dk = x.shape[-3:]
    swapped = np.swapaxes(x.data, -2, -3)
    out = swapped.reshape(x.shape[:-3] + (t, h * dk))

    def vjp(g):
        g = g.reshape(x.shape[:-3] + (t, h, dk))
        return (np.swapaxes(g, -2, -3),)

    return _result('merge_heads', out, (x,), vjp)


def rows_to_cols(x: Tensor, members: int) -> Tensor:
    '''``(..., M*T, d)`` to ``(..., T, M*d)``

    Rows are member-major: rows ``[m*T, (m+1)*T)`` belong to member
    ``m`` and become columns ``[m*d, (m+1)*d)``.

    '''
    x = as_tensor(x)
    rows, d = x.shape[-2:]
    if rows % members:
        raise DimensionError('{} rows cannot be split into {} members'
                             .format(rows, members))
    t = rows // members
    lead = x.shape[:-2]
    out = np.swapaxes(x.data.reshape(lead + (members, t, d)), -2, -3)
    out = out.reshape(lead + (t, members * d))

    def vjp(g):
        g = np.swapaxes(g.reshape(lead + (t, members, d)), -2, -3)
        return (g.reshape(x.shape),)

    return _result('rows_to_cols', out, (x,), vjp)


def cols_to_rows(x: Tensor, members: int) -> Tensor:
    '''Inverse of :func:`rows_to_cols`'''
    x = as_tensor(x)
    t, width = x.shape[-2:]
    if width % members:
        raise DimensionError('{} columns cannot be split into {} members'
                             .format(width, members))
    d = width // members
    lead = x.shape[:-2]
    out = np.swapaxes(x.data.reshape(lead + (t, members, d)), -2, -3)
    out = out.reshape(lead + (members * t, d))

    def vjp(g):
        g = np.swapaxes(g.reshape(lead + (members, t, d)), -2, -3)
        return (g.reshape(x.shape),)

    return _result('cols_to_rows', out, (x,), vjp)
