import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hydraens.errors import ConfigError
from hydraens.pruning.budget import PruneBudget, check_total, max_removable
from hydraens.pruning.circuit import CircuitRanking, extract_circuit
from hydraens.pruning.taylor import taylor_prune
from hydraens.transformer import HeadMask, Model, apply_mask, train_steps

logger = logging.getLogger(__name__)
logger.addHandler(logging.StreamHandler())

STRATEGIES = ('taylor', 'circuit')
DEPTH_FACTOR = 1.5
MAX_REDRAWS = 64


def pool_depth(budget: int, model: Model,
               factor: float = DEPTH_FACTOR) -> int:
    '''Ranking depth ``R = ceil(factor * B)``, capped by the
    one-survivor rule'''
    return min(int(math.ceil(factor * budget)), max_removable(model.config))


def sample_from_ranking(ranking: CircuitRanking, budget: int, seed: int,
                        n_layers: int, n_heads: int,
                        avoid: Sequence[HeadMask] = ()) -> HeadMask:
    '''Samples ``budget`` of the ranked heads to remove

    Position ``i`` of an ``R``-deep ranking is drawn with weight
    ``R - i``, so heads ablated early are the likeliest to go. Masks in
    ``avoid`` are redrawn from the same stream, up to a fixed number of
    attempts.

    '''
    depth = len(ranking)
    if budget > depth:
        raise ConfigError('cannot sample {} heads from a ranking of {}'
                          .format(budget, depth))
    if budget == 0:
        return HeadMask.full(n_layers, n_heads)
    rng = np.random.default_rng(seed)
    weights = np.arange(depth, 0, -1, dtype=np.float64)
    weights /= weights.sum()
    mask = None
    for _ in range(MAX_REDRAWS):
        picked = rng.choice(depth, size=budget, replace=False, p=weights)
        mask = HeadMask.from_removed(
            n_layers, n_heads, [ranking.removals[i] for i in picked])
        if mask not in avoid:
            break
    return mask


def make_members(model: Model, n_members: int, strategy: str,
                 seeds: Sequence[int], budget: PruneBudget, id_data,
                 ood_data=None, kind: str = 'avg',
                 calib_size: int = 512, batch_size: int = 64,
                 depth_factor: float = DEPTH_FACTOR,
                 ranking: Optional[CircuitRanking] = None,
                 finetune_steps: int = 0, lr: float = 0.05,
                 subsample: Optional[int] = None
                 ) -> List[Tuple[HeadMask, Model]]:
    '''Builds ``n_members`` differently pruned copies of ``model``

    ``taylor`` scores heads on a calibration subset drawn with each
    member's seed. ``circuit`` ranks heads once to depth
    ``ceil(depth_factor * B)`` and samples each member's ``B`` removals
    from that pool with its seed; members with different seeds get
    different masks whenever the pool allows it, and equal seeds give
    equal masks.

    Each member is returned structurally pruned, optionally fine-tuned
    for ``finetune_steps`` SGD steps on ``id_data``.

    '''
    if n_members < 1:
        raise ConfigError('need at least one member: {}'.format(n_members))
    if len(seeds) != n_members:
        raise ConfigError('{} seeds for {} members'.format(len(seeds),
                                                          n_members))
    if strategy not in STRATEGIES:
        raise ConfigError('strategy has to be one of {}: {}'
                          .format(STRATEGIES, strategy))
    cfg = model.config
    budget.validate(cfg)

    masks: List[HeadMask] = []
    if strategy == 'taylor':
        for seed in seeds:
            n = min(calib_size, len(id_data))
            index = np.sort(np.random.default_rng(seed).choice(
                len(id_data), n, replace=False))
            calib = id_data.subset(index).batches(batch_size)
            masks.append(taylor_prune(model, budget, calib, seed=seed))
    else:
        total = budget.count
        check_total(total, cfg)
        if ranking is None:
            ranking = extract_circuit(
                model, pool_depth(total, model, depth_factor), kind,
                id_data, ood_data, subsample=subsample)
        by_seed = {}
        for seed in seeds:
            if seed not in by_seed:
                by_seed[seed] = sample_from_ranking(
                    ranking, total, seed, cfg.n_layers, cfg.n_heads,
                    avoid=list(by_seed.values()))
            masks.append(by_seed[seed])

    members = []
    for i, (seed, mask) in enumerate(zip(seeds, masks)):
        member = apply_mask(model, mask)
        if finetune_steps:
            member = train_steps(member, id_data.batches(batch_size, seed),
                                 lr, finetune_steps)
        logger.info('member %d (seed %d): %s', i, seed, mask.to_text())
        members.append((mask, member))
    return members
