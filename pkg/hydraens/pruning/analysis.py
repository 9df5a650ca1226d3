from typing import Dict

import numpy as np
from scipy.spatial.distance import jensenshannon

from hydraens.errors import DimensionError
from hydraens.pruning.ablation import ablated
from hydraens.transformer import HeadMask, Model


def _same_shape(a: HeadMask, b: HeadMask):
    if a.bits.shape != b.bits.shape:
        raise DimensionError('masks differ in shape: {} vs {}'
                             .format(a.bits.shape, b.bits.shape))


def pruned_overlap(a: HeadMask, b: HeadMask) -> float:
    '''Shared removed heads over the larger removal set

    Two masks that remove nothing overlap fully.

    '''
    _same_shape(a, b)
    ra, rb = ~a.bits, ~b.bits
    larger = max(int(ra.sum()), int(rb.sum()))
    if larger == 0:
        return 1.0
    return float((ra & rb).sum() / larger)


def layer_divergence(a: HeadMask, b: HeadMask) -> float:
    '''Jensen-Shannon divergence (base 2) of where two masks prune

    Each mask gives a distribution over layers: the share of its removed
    heads in each layer.

    '''
    _same_shape(a, b)
    pa = (~a.bits).sum(axis=1).astype(np.float64)
    pb = (~b.bits).sum(axis=1).astype(np.float64)
    if pa.sum() == 0 or pb.sum() == 0:
        return 0.0 if pa.sum() == pb.sum() else 1.0
    return float(jensenshannon(pa / pa.sum(), pb / pb.sum(), base=2) ** 2)


def pruning_delta(model: Model, mask: HeadMask) -> Dict[str, np.ndarray]:
    '''Parameter perturbation ``theta_pruned - theta`` of removing heads

    Removal zeroes the heads' ``w_o`` blocks; every other parameter is
    unchanged and gets a zero delta.

    '''
    pruned = ablated(model, mask.removed())
    before = model.parameters()
    after = pruned.parameters()
    return {name: after[name].data - before[name].data for name in before}
