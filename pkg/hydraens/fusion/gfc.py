'''Grouped fully-connected projections

A GFC layer applies member ``m``'s weight to member ``m``'s column
slice of the input and nothing else. The member weights are packed into
one block-diagonal matrix so the whole group runs as a single matmul.

'''
from typing import Sequence

import numpy as np
import scipy.linalg

from hydraens.errors import DimensionError
from hydraens.numerics import Tensor, ops


def pack_block_diag(weights: Sequence[Tensor]) -> Tensor:
    if not weights:
        raise DimensionError('a grouped projection needs at least one group')
    packed = scipy.linalg.block_diag(*[w.data for w in weights])
    return Tensor.wrap(packed.astype(weights[0].dtype, copy=False))


def pack_bias(biases: Sequence[Tensor]) -> Tensor:
    return Tensor.wrap(np.concatenate([b.data for b in biases]))


def gfc(x: Tensor, packed: Tensor, bias: Tensor) -> Tensor:
    '''``x @ blockdiag(W_1..W_M) + concat(b_1..b_M)``'''
    if x.shape[-1] != packed.shape[0]:
        raise DimensionError('grouped projection expects width {}, got {}'
                             .format(packed.shape[0], x.shape[-1]))
    return ops.add(ops.matmul(x, packed), bias)
