'''Accuracy, calibration and out-of-distribution metrics

All functions take plain arrays: ``probs`` is ``N x C`` with rows on the
probability simplex, ``labels`` holds integer class ids, and OOD scores
follow the convention that a higher score means "more in-distribution".

'''
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import rankdata

from hydraens.errors import ContractError, DimensionError

NLL_CLAMP = 1e-12
DEFAULT_BINS = 15
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class PredictionSet:
    '''Probabilities of one model on a dataset

    ``labels`` is ``None`` for out-of-distribution samples, which carry
    no class.

    '''
    probs: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise DimensionError('probs has to be N x C: {}'
                                 .format(probs.shape))
        if probs.size and (probs.min() < 0 or np.abs(
                probs.sum(axis=1) - 1.0).max() > SIMPLEX_TOL):
            raise ContractError('probability rows have to lie on the '
                                'simplex (tolerance {})'.format(SIMPLEX_TOL))
        object.__setattr__(self, 'probs', probs)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (probs.shape[0],):
                raise DimensionError('labels {} do not match probs {}'
                                     .format(labels.shape, probs.shape))
            if labels.size and (labels.min() < 0
                                or labels.max() >= probs.shape[1]):
                raise IndexError('label out of range ([0, {}))'
                                 .format(probs.shape[1]))
            object.__setattr__(self, 'labels', labels)

    @property
    def is_ood(self) -> bool:
        return self.labels is None

    def __len__(self):
        return self.probs.shape[0]


def _nonempty(probs, name='prediction set'):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[None]
    if probs.shape[0] == 0:
        raise ContractError('{} is empty'.format(name))
    return probs


def _labelled(probs, labels):
    probs = _nonempty(probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != probs.shape[0]:
        raise DimensionError('{} labels for {} predictions'
                             .format(labels.shape[0], probs.shape[0]))
    return probs, labels


def msp(probs) -> np.ndarray:
    '''Maximum softmax probability of each row (a scalar for one row)'''
    return np.asarray(probs, dtype=np.float64).max(axis=-1)


def predictive_entropy(probs) -> np.ndarray:
    p = np.clip(np.asarray(probs, dtype=np.float64), NLL_CLAMP, 1.0)
    return -(np.asarray(probs) * np.log(p)).sum(axis=-1)


def accuracy(probs, labels) -> float:
    '''Fraction of rows whose argmax equals the label

    Ties go to the lowest class index.

    '''
    probs, labels = _labelled(probs, labels)
    return float((probs.argmax(axis=1) == labels).mean())


def brier(probs, labels) -> float:
    probs, labels = _labelled(probs, labels)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    return float(((probs - onehot) ** 2).sum(axis=1).mean())


def nll(probs, labels) -> float:
    probs, labels = _labelled(probs, labels)
    p = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(p, NLL_CLAMP)).mean())


def calibration_error(confidences, correct, bins: int = DEFAULT_BINS,
                      adaptive: bool = False) -> float:
    '''Expected calibration error of confidences against correctness

    Equal-width bins split ``[0, 1]`` into ``bins`` intervals
    ``((b-1)/bins, b/bins]``, the first one closed at 0. Adaptive bins
    hold ``floor(N/bins)`` or ``ceil(N/bins)`` samples of the sorted
    confidences. Either way the result is
    ``sum_b |sum(correct_b) - sum(conf_b)| / N``, a fraction.

    '''
    if bins < 1:
        raise ContractError('bins has to be >= 1: {}'.format(bins))
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    hit = np.asarray(correct, dtype=np.float64).reshape(-1)
    n = conf.shape[0]
    if n == 0:
        raise ContractError('prediction set is empty')
    if hit.shape[0] != n:
        raise DimensionError('{} correctness flags for {} confidences'
                             .format(hit.shape[0], n))
    if adaptive:
        order = np.argsort(conf, kind='stable')
        total = 0.0
        for group in np.array_split(order, bins):
            if group.size:
                total += abs(hit[group].sum() - conf[group].sum())
        return float(total / n)
    index = np.clip(np.ceil(conf * bins).astype(np.int64) - 1, 0, bins - 1)
    hits = np.bincount(index, weights=hit, minlength=bins)
    confs = np.bincount(index, weights=conf, minlength=bins)
    return float(np.abs(hits - confs).sum() / n)


def ece(probs, labels, bins: int = DEFAULT_BINS) -> float:
    probs, labels = _labelled(probs, labels)
    return calibration_error(msp(probs), probs.argmax(axis=1) == labels,
                             bins)


def aece(probs, labels, bins: int = DEFAULT_BINS) -> float:
    probs, labels = _labelled(probs, labels)
    return calibration_error(msp(probs), probs.argmax(axis=1) == labels,
                             bins, adaptive=True)


def _scores(id_scores, ood_scores):
    id_scores = np.asarray(id_scores, dtype=np.float64).reshape(-1)
    ood_scores = np.asarray(ood_scores, dtype=np.float64).reshape(-1)
    if id_scores.size == 0 or ood_scores.size == 0:
        raise ContractError('OOD metrics need non-empty ID and OOD scores '
                            '({} / {})'.format(id_scores.size,
                                               ood_scores.size))
    return id_scores, ood_scores


def auroc(id_scores, ood_scores) -> float:
    '''``P(id > ood) + P(id == ood) / 2`` over all pairs

    Computed from midranks, which gives ties half credit.

    '''
    id_scores, ood_scores = _scores(id_scores, ood_scores)
    n1, n2 = id_scores.size, ood_scores.size
    ranks = rankdata(np.concatenate([id_scores, ood_scores]))
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n2))


def fpr95(id_scores, ood_scores) -> float:
    '''False-positive rate at the highest threshold keeping TPR >= 0.95

    A sample is accepted as in-distribution when its score is ``>=`` the
    threshold, so OOD scores tied with it count as false positives.

    '''
    id_scores, ood_scores = _scores(id_scores, ood_scores)
    n = id_scores.size
    k = -(-95 * n // 100)
    threshold = np.sort(id_scores)[::-1][k - 1]
    return float((ood_scores >= threshold).mean())


def aupr(id_scores, ood_scores) -> float:
    '''Area under the precision-recall staircase, ID as positives

    One point per distinct score, plus ``(recall=0, precision=1)``;
    the area is the trapezoid rule over recall.

    '''
    id_scores, ood_scores = _scores(id_scores, ood_scores)
    scores = np.concatenate([id_scores, ood_scores])
    positive = np.concatenate([np.ones(id_scores.size),
                               np.zeros(ood_scores.size)])
    order = np.argsort(-scores, kind='stable')
    scores, positive = scores[order], positive[order]
    tp = np.cumsum(positive)
    fp = np.cumsum(1.0 - positive)
    ends = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]
    precision = np.r_[1.0, tp[ends] / (tp[ends] + fp[ends])]
    recall = np.r_[0.0, tp[ends] / id_scores.size]
    return float(trapezoid(precision, recall))
