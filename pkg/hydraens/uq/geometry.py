import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from hydraens.errors import ContractError, DimensionError
from hydraens.transformer import Model, head_outputs

RIDGE_SCALE = 1e-6


@dataclass(frozen=True)
class HeadGeometryReport:
    '''Distances between the ID and OOD CLS centroids of each head'''
    euclidean: np.ndarray
    mahalanobis: np.ndarray

    @property
    def mean_euclidean(self) -> float:
        return float(self.euclidean.mean())

    @property
    def mean_mahalanobis(self) -> float:
        return float(self.mahalanobis.mean())

    def to_text(self) -> str:
        lines = ['head\teuclidean\tmahalanobis']
        for h, (e, m) in enumerate(zip(self.euclidean, self.mahalanobis)):
            lines.append('{}\t{!r}\t{!r}'.format(h, float(e), float(m)))
        lines.append('mean\t{!r}\t{!r}'.format(self.mean_euclidean,
                                               self.mean_mahalanobis))
        return '\n'.join(lines) + '\n'


def _mahalanobis(diff, cov, ridge):
    d = cov.shape[0]
    lam = RIDGE_SCALE * np.trace(cov) / d if ridge is None else ridge
    reg = cov + lam * np.eye(d)
    try:
        x = scipy.linalg.solve(reg, diff, assume_a='sym')
    except (scipy.linalg.LinAlgError, ValueError):
        x = np.linalg.pinv(reg) @ diff
    return float(np.sqrt(max(float(diff @ x), 0.0)))


def centroid_distances(id_vectors, ood_vectors,
                       ridge: Optional[float] = None) -> HeadGeometryReport:
    '''Per-head centroid distances of CLS vectors

    Arguments:
        id_vectors: ``(N, H, d_head)`` in-distribution vectors.
        ood_vectors: ``(M, H, d_head)`` out-of-distribution vectors.
        ridge (float): Added to the diagonal of the ID covariance before
            inversion. ``None`` uses ``1e-6 * trace / d_head`` per head.

    '''
    id_v = np.asarray(id_vectors, dtype=np.float64)
    ood_v = np.asarray(ood_vectors, dtype=np.float64)
    if id_v.ndim != 3 or ood_v.ndim != 3 or id_v.shape[1:] != ood_v.shape[1:]:
        raise DimensionError('CLS vectors have to be (N, H, d_head) alike: '
                             '{} vs {}'.format(id_v.shape, ood_v.shape))
    n, n_heads, dk = id_v.shape
    if n == 0 or ood_v.shape[0] == 0:
        raise ContractError('head geometry needs ID and OOD samples')
    if n < dk + 1:
        warnings.warn('{} ID samples for head dimension {}: the covariance '
                      'is rank-deficient and only the ridge keeps it '
                      'invertible'.format(n, dk), RuntimeWarning)

    euclid = np.zeros(n_heads)
    mahal = np.zeros(n_heads)
    for h in range(n_heads):
        diff = id_v[:, h].mean(axis=0) - ood_v[:, h].mean(axis=0)
        centered = id_v[:, h] - id_v[:, h].mean(axis=0)
        cov = centered.T @ centered / max(n - 1, 1)
        euclid[h] = np.linalg.norm(diff)
        mahal[h] = _mahalanobis(diff, cov, ridge)
    return HeadGeometryReport(euclidean=euclid, mahalanobis=mahal)


def head_geometry(model: Model, id_tokens, ood_tokens, layer: int,
                  ridge: Optional[float] = None) -> HeadGeometryReport:
    '''Centroid distances of the heads of ``layer`` on ID vs OOD data'''
    id_tokens = np.asarray(id_tokens)
    ood_tokens = np.asarray(ood_tokens)
    if len(id_tokens) == 0 or len(ood_tokens) == 0:
        raise ContractError('head geometry needs ID and OOD samples')
    return centroid_distances(head_outputs(model, id_tokens, layer),
                              head_outputs(model, ood_tokens, layer),
                              ridge)
