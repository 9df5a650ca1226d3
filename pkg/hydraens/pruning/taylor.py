import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hydraens.errors import ContractError
from hydraens.pruning.budget import PruneBudget
from hydraens.transformer import HeadMask, Model, apply_mask, loss_and_grads

logger = logging.getLogger(__name__)
logger.addHandler(logging.StreamHandler())


@dataclass(frozen=True)
class HeadScore:
    '''First-order Taylor importance of one head

    ``q``, ``k`` and ``v`` are the mean ``|W * dL/dW|`` over the head's
    block of the query, key and value projections; ``score`` is their
    average.

    '''
    layer: int
    head: int
    q: float
    k: float
    v: float
    score: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, 'score', (self.q + self.k + self.v) / 3)


def mean_gradients(model: Model, calib: Sequence[Tuple[np.ndarray,
                                                       np.ndarray]]
                   ) -> Dict[str, np.ndarray]:
    '''Average over batches of the batch-mean cross-entropy gradient'''
    calib = list(calib)
    if not calib:
        raise ContractError('calibration set is empty')
    total = None
    for tokens, labels in calib:
        if len(tokens) == 0:
            raise ContractError('calibration batch is empty')
        _, grads = loss_and_grads(model, tokens, labels)
        if total is None:
            total = {name: g.numpy() for name, g in grads.items()}
        else:
            for name, g in grads.items():
                total[name] += g.data
    return {name: g / len(calib) for name, g in total.items()}


def head_block_score(w: np.ndarray, g: np.ndarray, position: int,
                     d_head: int) -> float:
    '''``sum |W * G|`` over a head's column block, divided by its size'''
    cols = slice(position * d_head, (position + 1) * d_head)
    block = np.abs(w[:, cols] * g[:, cols])
    return float(block.sum() / (d_head * w.shape[0]))


def scores_from_gradients(model: Model,
                          grads: Dict[str, np.ndarray]) -> List[HeadScore]:
    scores = []
    for l, w in enumerate(model.layers):
        def part(name, attr, position):
            return head_block_score(getattr(w, attr).data,
                                    grads['layer{}.shared.{}'.format(l, name)],
                                    position, w.d_head)

        for position, head in enumerate(w.heads):
            scores.append(HeadScore(
                layer=l, head=head,
                q=part('W_Q', 'w_q', position),
                k=part('W_K', 'w_k', position),
                v=part('W_V', 'w_v', position)))
    return scores


def taylor_scores(model: Model, calib) -> List[HeadScore]:
    '''Taylor scores of every head the model carries

    Arguments:
        model: Model to score; pruned models score their surviving heads.
        calib: Non-empty sequence of ``(tokens, labels)`` batches.

    '''
    return scores_from_gradients(model, mean_gradients(model, calib))


def tie_order(n_layers: int, n_heads: int,
              seed: Optional[int] = None) -> Dict[Tuple[int, int], int]:
    '''Rank of every head for breaking ties

    ``None`` gives lexicographic ``(layer, head)`` order; a seed shuffles
    it.

    '''
    pairs = [(l, h) for l in range(n_layers) for h in range(n_heads)]
    if seed is not None:
        perm = np.random.default_rng(seed).permutation(len(pairs))
        pairs = [pairs[i] for i in perm]
    return {p: i for i, p in enumerate(pairs)}


def _least_important(scores, order):
    return sorted(scores, key=lambda s: (s.score, -order[(s.layer, s.head)]))


def taylor_prune(model: Model, budget: PruneBudget, calib,
                 recompute: bool = True,
                 seed: Optional[int] = None) -> HeadMask:
    '''Selects the heads to remove by Taylor score

    With a per-layer budget, layers are pruned in order: the ``r_l``
    lowest-scoring heads of layer ``l`` are removed, the model is
    rebuilt without them, and scores are recomputed before the next
    layer. ``recompute=False`` scores once on the unpruned model. A
    global budget removes the ``B`` lowest-scoring heads across all
    layers in one pass, skipping heads whose removal would empty a
    layer.

    Ties keep the head ranked first in :func:`tie_order`.

    '''
    cfg = model.config
    budget.validate(cfg)
    order = tie_order(cfg.n_layers, cfg.n_heads, seed)
    mask = model.mask()

    if budget.mode == 'global':
        if budget.total == 0:
            return mask
        removed = 0
        for s in _least_important(taylor_scores(model, calib), order):
            if not mask.can_remove(s.layer, s.head):
                continue
            mask = mask.without(s.layer, s.head)
            removed += 1
            if removed == budget.total:
                break
        if removed < budget.total:
            raise ContractError('only {} of {} heads could be removed'
                                .format(removed, budget.total))
        return mask

    current = model
    scores = None
    for l, r in enumerate(budget.per_layer):
        if r == 0:
            continue
        if scores is None or recompute:
            scores = taylor_scores(current, calib)
        layer_scores = [s for s in scores if s.layer == l]
        if r >= len(layer_scores):
            raise ContractError('layer {} carries {} heads, cannot remove {}'
                                .format(l, len(layer_scores), r))
        for s in _least_important(layer_scores, order)[:r]:
            mask = mask.without(l, s.head)
        logger.debug('layer %d: %s', l, mask.to_text())
        if recompute:
            current = apply_mask(current, mask)
    return mask
