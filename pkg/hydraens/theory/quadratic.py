'''Exact quadratic testbed for the pruning loss-gap inequality

The clean loss is ``L_t(x) = c_t + (x-s)' H_t (x-s) / 2`` and the noisy
loss ``L_n(x) = c_n + g'(x-s) + (x-s)' H_n (x-s) / 2``, both around the
shared point ``s`` where the clean gradient vanishes. The gap
``dL(x) = L_n(x) - L_t(x)`` then changes under a perturbation ``delta``
by exactly ``g'delta + delta'(H_n - H_t)delta / 2``.

'''
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from hydraens.errors import ConfigError, ContractError, DimensionError

REGIMES = ('holds', 'violated-hessian', 'violated-alignment')
PD_MARGIN = 0.1


@dataclass(frozen=True)
class QuadraticLossPair:
    theta_star: np.ndarray
    h_clean: np.ndarray
    h_noisy: np.ndarray
    grad_noisy: np.ndarray
    c_clean: float = 0.0
    c_noisy: float = 0.0

    def __post_init__(self):
        n = self.theta_star.shape[0]
        for name in ('h_clean', 'h_noisy'):
            h = getattr(self, name)
            if h.shape != (n, n):
                raise DimensionError('{} has shape {}, expected ({}, {})'
                                     .format(name, h.shape, n, n))
            if not np.allclose(h, h.T, rtol=0, atol=1e-12):
                raise DimensionError('{} is not symmetric'.format(name))
        if self.grad_noisy.shape != (n,):
            raise DimensionError('grad_noisy has shape {}, expected ({},)'
                                 .format(self.grad_noisy.shape, n))

    @property
    def n(self) -> int:
        return self.theta_star.shape[0]

    @property
    def hessian_difference(self) -> np.ndarray:
        return self.h_noisy - self.h_clean

    def loss_clean(self, x) -> float:
        e = np.asarray(x) - self.theta_star
        return float(self.c_clean + 0.5 * e @ self.h_clean @ e)

    def loss_noisy(self, x) -> float:
        e = np.asarray(x) - self.theta_star
        return float(self.c_noisy + self.grad_noisy @ e
                     + 0.5 * e @ self.h_noisy @ e)

    def gap(self, x) -> float:
        return self.loss_noisy(x) - self.loss_clean(x)


def taylor_gap_predictor(q: QuadraticLossPair, delta) -> float:
    '''Predicted increase of the loss gap at ``theta_star`` under
    ``delta``'''
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (q.n,):
        raise DimensionError('delta has shape {}, expected ({},)'
                             .format(delta.shape, q.n))
    return float(q.grad_noisy @ delta
                 + 0.5 * delta @ q.hessian_difference @ delta)


@dataclass(frozen=True)
class GapReport:
    seed: int
    regime: str
    gap_before: float
    gap_after: float
    alignment: float
    min_eig: float
    clean_increase: float
    noisy_increase: float
    predicted: float

    @property
    def held(self) -> bool:
        "Whether pruning widened (or kept) the gap."
        return self.gap_before <= self.gap_after

    @property
    def measured(self) -> float:
        return self.gap_after - self.gap_before


def _psd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T / n


def _random_rotation(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def make_pair(rng: np.random.Generator, n: int, regime: str):
    '''Builds a loss pair and a perturbation for ``regime``

    ``holds``: positive-definite Hessian difference and ``g'delta >= 0``.
    ``violated-hessian``: ``delta`` along a negative-eigenvalue direction
    of the difference, ``g`` orthogonal to it. ``violated-alignment``:
    positive-definite difference but ``g'delta`` negative enough to
    shrink the gap.

    '''
    if regime not in REGIMES:
        raise ConfigError('regime has to be one of {}: {}'
                          .format(REGIMES, regime))
    theta = rng.standard_normal(n)
    delta = rng.standard_normal(n)
    g = rng.standard_normal(n)
    c_t, c_n = rng.standard_normal(2)

    if regime == 'violated-hessian':
        rot = _random_rotation(rng, n)
        eig = rng.uniform(0.5, 2.0, size=n)
        eig[0] = -rng.uniform(0.5, 2.0)
        diff = (rot * eig) @ rot.T
        h_t = _psd(rng, n) + (abs(eig[0]) + PD_MARGIN) * np.eye(n)
        delta = rot[:, 0] * np.linalg.norm(delta)
        g = g - (g @ delta) / (delta @ delta) * delta
    else:
        diff = _psd(rng, n) + PD_MARGIN * np.eye(n)
        h_t = _psd(rng, n)
        if regime == 'holds':
            if g @ delta < 0:
                g = -g
        else:
            g = -(delta @ diff @ delta + 1.0) * delta / (delta @ delta)
    diff = 0.5 * (diff + diff.T)
    pair = QuadraticLossPair(theta_star=theta, h_clean=h_t,
                             h_noisy=h_t + diff, grad_noisy=g,
                             c_clean=float(c_t), c_noisy=float(c_n))
    return pair, delta


def proposition1_trial(seed: int, n: int, regime: str = 'holds',
                       delta_scale: float = 1.0,
                       trial: int = 0) -> GapReport:
    '''One synthetic check of "pruning widens the noisy/clean loss gap"

    The RNG stream is derived from ``(seed, trial)``. ``delta_scale``
    rescales the perturbation; ``0`` leaves the parameters where they
    are.

    '''
    if n < 2:
        raise ConfigError('n has to be >= 2: {}'.format(n))
    rng = np.random.default_rng([seed, trial])
    pair, delta = make_pair(rng, n, regime)
    delta = delta * delta_scale
    x0 = pair.theta_star
    x1 = x0 + delta
    return GapReport(
        seed=seed, regime=regime,
        gap_before=pair.gap(x0), gap_after=pair.gap(x1),
        alignment=float(pair.grad_noisy @ delta),
        min_eig=float(np.linalg.eigvalsh(pair.hessian_difference)[0]),
        clean_increase=pair.loss_clean(x1) - pair.loss_clean(x0),
        noisy_increase=pair.loss_noisy(x1) - pair.loss_noisy(x0),
        predicted=taylor_gap_predictor(pair, delta))


def sweep(seeds: Sequence[int], n: int, regime: str = 'holds',
          threads: Optional[int] = None) -> List[GapReport]:
    '''Runs :func:`proposition1_trial` for every seed'''
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: proposition1_trial(s, n, regime),
                             seeds))


def gap_table(reports: Sequence[GapReport]) -> str:
    '''Line-oriented table with one row per trial

    A ``# kind=gap rows=<n>`` header is followed by
    ``seed regime gap_before gap_after alignment min_eig clean_increase
    noisy_increase predicted held`` lines, tab-separated.

    '''
    lines = ['# kind=gap rows={}'.format(len(reports))]
    for r in reports:
        lines.append('{}\t{}\t{!r}\t{!r}\t{!r}\t{!r}\t{!r}\t{!r}\t{!r}\t{}'
                     .format(r.seed, r.regime, r.gap_before, r.gap_after,
                             r.alignment, r.min_eig, r.clean_increase,
                             r.noisy_increase, r.predicted, int(r.held)))
    return '\n'.join(lines) + '\n'


def gap_table_from_text(text: str) -> List[GapReport]:
    reports = []
    for line in text.splitlines():
        if not line.strip() or line.startswith('#'):
            continue
        fields = line.split('\t')
        if len(fields) != 10:
            raise ContractError('gap line needs 10 fields: {!r}'
                                .format(line))
        reports.append(GapReport(int(fields[0]), fields[1],
                                 *[float(x) for x in fields[2:9]]))
    return reports
