import logging
import warnings
from dataclasses import dataclass
from typing import Dict

import numpy as np

from hydraens.data import Dataset
from hydraens.errors import ContractError, DimensionError
from hydraens.transformer import Model, loss_and_grads

logger = logging.getLogger(__name__)
logger.addHandler(logging.StreamHandler())


@dataclass(frozen=True)
class ProbeReport:
    '''Empirical check of the loss-gap assumptions on a trained model

    ``fisher_diff_*`` summarise the empirical Fisher diagonal of the noisy
    set minus that of the clean set, a stand-in for the Hessian diagonal
    difference. ``fisher_diff_stderr`` is the standard error of the mean
    difference across the probed samples.

    '''
    alignment: float
    fisher_diff_mean: float
    fisher_diff_stderr: float
    fisher_diff_positive_fraction: float
    clean_grad_norm: float
    noisy_grad_norm: float
    n_samples: int

    def to_text(self) -> str:
        return ''.join('{} = {!r}\n'.format(k, getattr(self, k)) for k in (
            'alignment', 'fisher_diff_mean', 'fisher_diff_stderr',
            'fisher_diff_positive_fraction', 'clean_grad_norm',
            'noisy_grad_norm', 'n_samples'))


def _noise_rows(noise, index):
    return None if noise is None else noise[index]


def _mean_gradient(model: Model, data: Dataset,
                   batch_size: int) -> Dict[str, np.ndarray]:
    noise = data.embedding_noise(model.config.d_model)
    total = None
    for start in range(0, len(data), batch_size):
        index = slice(start, start + batch_size)
        _, grads = loss_and_grads(model, data.tokens[index],
                                  data.labels[index],
                                  input_noise=_noise_rows(noise, index))
        weight = len(data.tokens[index]) / len(data)
        if total is None:
            total = {k: g.numpy() * weight for k, g in grads.items()}
        else:
            for k, g in grads.items():
                total[k] += g.data * weight
    return total


def _fisher(model: Model, data: Dataset, n: int):
    '''Per-sample squared gradients flattened over all parameters'''
    noise = data.embedding_noise(model.config.d_model)
    rows = []
    for i in range(n):
        index = slice(i, i + 1)
        _, grads = loss_and_grads(model, data.tokens[index],
                                  data.labels[index],
                                  input_noise=_noise_rows(noise, index))
        rows.append(np.concatenate([np.square(grads[k].data).ravel()
                                    for k in sorted(grads)]))
    return np.stack(rows)


def _flat_norm(grads) -> float:
    return float(np.sqrt(sum(np.sum(np.square(g)) for g in grads.values())))


def assumption_probe(model: Model, clean_data: Dataset, noisy_data: Dataset,
                     delta: Dict[str, np.ndarray], max_samples: int = 256,
                     batch_size: int = 64) -> ProbeReport:
    '''Measures the two assumptions behind "pruning widens the loss gap"

    Arguments:
        model: Model assumed trained to near-convergence on clean data.
        clean_data: Labelled clean split.
        noisy_data: Labelled noisy split.
        delta: Parameter perturbation keyed by parameter name, usually
            :func:`hydraens.pruning.pruning_delta`.
        max_samples (int): Cap on the samples used for the Fisher diagonal.
        batch_size (int): Batch size for the mean gradients.

    The alignment is ``g_noisy . delta`` with ``g_noisy`` the mean
    cross-entropy gradient on ``noisy_data``. A clean gradient at least as
    large as the noisy one means the model is far from a clean minimum;
    that is warned about and the norm is reported.

    '''
    for data in (clean_data, noisy_data):
        if data.labels is None:
            raise ContractError('{} split has no labels'.format(data.split))
        if len(data) == 0:
            raise ContractError('{} split is empty'.format(data.split))
    params = model.parameters()
    if set(delta) != set(params):
        raise ContractError('delta names differ from model parameters: {}'
                            .format(sorted(set(delta) ^ set(params))))
    for name, t in params.items():
        if np.shape(delta[name]) != t.shape:
            raise DimensionError('delta {} has shape {}, expected {}'
                                 .format(name, np.shape(delta[name]),
                                         t.shape))

    g_clean = _mean_gradient(model, clean_data, batch_size)
    g_noisy = _mean_gradient(model, noisy_data, batch_size)
    alignment = float(sum(np.sum(g_noisy[k] * delta[k]) for k in params))
    clean_norm = _flat_norm(g_clean)
    noisy_norm = _flat_norm(g_noisy)
    if clean_norm >= noisy_norm:
        warnings.warn('clean gradient norm {:.3g} is not below the noisy '
                      'one {:.3g}; the model is not near a clean minimum'
                      .format(clean_norm, noisy_norm), RuntimeWarning)

    n_clean = min(len(clean_data), max_samples)
    n_noisy = min(len(noisy_data), max_samples)
    f_clean = _fisher(model, clean_data, n_clean)
    f_noisy = _fisher(model, noisy_data, n_noisy)
    diff = f_noisy.mean(axis=0) - f_clean.mean(axis=0)

    per_clean = f_clean.mean(axis=1)
    per_noisy = f_noisy.mean(axis=1)
    var = 0.0
    if n_clean > 1:
        var += per_clean.var(ddof=1) / n_clean
    if n_noisy > 1:
        var += per_noisy.var(ddof=1) / n_noisy
    logger.info('probe: alignment %.4g, fisher diff %.4g', alignment,
                float(diff.mean()))
    return ProbeReport(
        alignment=alignment,
        fisher_diff_mean=float(diff.mean()),
        fisher_diff_stderr=float(np.sqrt(var)),
        fisher_diff_positive_fraction=float(np.mean(diff > 0)),
        clean_grad_norm=clean_norm, noisy_grad_norm=noisy_norm,
        n_samples=min(n_clean, n_noisy))
