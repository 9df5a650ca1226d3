import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from hydraens.errors import ConfigError
from hydraens.numerics import get_precision, precision
from hydraens.pruning.ablation import SCORE_KINDS, ablate_perm, eval_score
from hydraens.pruning.budget import check_total
from hydraens.pruning.taylor import tie_order
from hydraens.transformer import HeadMask, Model

logger = logging.getLogger(__name__)
logger.addHandler(logging.StreamHandler())


def eval_threads() -> int:
    '''Worker count for candidate evaluation

    ``HYDRA_THREADS`` caps it; unset or ``0`` means one per CPU.

    '''
    value = os.getenv('HYDRA_THREADS', '0')
    try:
        n = int(value)
    except ValueError:
        raise ConfigError('HYDRA_THREADS has to be an integer: {!r}'
                          .format(value))
    if n < 0:
        raise ConfigError('HYDRA_THREADS has to be >= 0: {}'.format(n))
    return n or os.cpu_count() or 1


@dataclass(frozen=True)
class CircuitRanking:
    '''Greedy removal order of heads

    ``trace[t]`` is the score after the ``t+1`` first removals;
    ``base_score`` the score of the unablated model.

    '''
    kind: str
    seed: Optional[int]
    removals: Tuple[Tuple[int, int], ...]
    trace: Tuple[float, ...]
    base_score: float = float('nan')

    def __post_init__(self):
        if len(set(self.removals)) != len(self.removals):
            raise ConfigError('ranking removes a head twice: {}'
                              .format(self.removals))
        if len(self.trace) != len(self.removals):
            raise ConfigError('ranking has {} removals but {} scores'
                              .format(len(self.removals), len(self.trace)))

    def __len__(self):
        return len(self.removals)

    def mask(self, n_layers: int, n_heads: int,
             depth: Optional[int] = None) -> HeadMask:
        "Mask removing the first ``depth`` heads (all by default)."
        removals = self.removals if depth is None else self.removals[:depth]
        return HeadMask.from_removed(n_layers, n_heads, removals)


def _subsample(data, n, seed):
    if data is None or n is None or n >= len(data):
        return data
    index = np.random.default_rng(seed).choice(len(data), n, replace=False)
    return data.subset(np.sort(index))


def extract_circuit(model: Model, budget: int, kind: str, id_data,
                    ood_data=None, seed: Optional[int] = None,
                    subsample: Optional[int] = None,
                    threads: Optional[int] = None) -> CircuitRanking:
    '''Greedy circuit extraction

    At each of ``budget`` steps every remaining head is ablated in turn
    on a copy of the current model and scored; the head whose ablation
    gives the highest score is ablated for good. Heads whose removal
    would leave their layer empty are not candidates.

    Arguments:
        model: Model to rank.
        budget (int): Number of heads to remove, ``B``.
        kind (str): Score, see :func:`eval_score`.
        id_data: Labelled ID data.
        ood_data: OOD data, for ``ood`` and ``avg`` kinds.
        seed (int): Shuffles the candidate order; among tied scores the
            first candidate in that order wins. ``None`` keeps
            lexicographic ``(layer, head)`` order.
        subsample (int): Evaluate on this many samples of each dataset
            instead of all of them.
        threads (int): Parallel candidate evaluations; defaults to
            :func:`eval_threads`.

    '''
    cfg = model.config
    check_total(budget, cfg)
    if kind not in SCORE_KINDS:
        raise ConfigError('score kind has to be one of {}: {}'
                          .format(SCORE_KINDS, kind))
    id_data = _subsample(id_data, subsample, 0)
    ood_data = _subsample(ood_data, subsample, 1)
    order = tie_order(cfg.n_layers, cfg.n_heads, seed)
    ranked = sorted(order, key=order.get)

    mode = get_precision()

    def score(m):
        with precision(mode):
            return eval_score(m, kind, id_data, ood_data)

    base = score(model)
    if budget == 0:
        return CircuitRanking(kind, seed, (), (), base)

    mask = model.mask()
    current = model
    removals: List[Tuple[int, int]] = []
    trace: List[float] = []
    with ThreadPoolExecutor(max_workers=threads or eval_threads()) as pool:
        for step in range(budget):
            candidates = [c for c in ranked if mask.can_remove(*c)]
            if not candidates:
                raise ConfigError('no removable head left after {} of {} '
                                  'steps'.format(step, budget))
            values = list(pool.map(
                lambda c: score(ablate_perm(current, *c)), candidates))
            best = 0
            for i, v in enumerate(values):
                if v > values[best]:
                    best = i
            layer, head = candidates[best]
            current = ablate_perm(current, layer, head)
            mask = mask.without(layer, head)
            removals.append((layer, head))
            trace.append(values[best])
            logger.info('step %d: removed (%d, %d), %s = %.6f',
                        step, layer, head, kind, values[best])
    return CircuitRanking(kind, seed, tuple(removals), tuple(trace), base)
