import contextlib
from typing import Iterable, Optional, Tuple

import numpy as np

from hydraens.errors import ConfigError, ContractError
from hydraens.numerics import Tensor
from hydraens.transformer import Model, predict_proba
from hydraens.uq import accuracy, auroc, msp

SCORE_KINDS = ('acc', 'ood', 'avg')


def _check_head(model: Model, layer: int, head: int):
    cfg = model.config
    if not (0 <= layer < cfg.n_layers and 0 <= head < cfg.n_heads):
        raise IndexError('head ({}, {}) out of range ([0, {}) x [0, {}))'
                         .format(layer, head, cfg.n_layers, cfg.n_heads))


def output_block(model: Model, layer: int, head: int) -> Optional[np.ndarray]:
    '''Copy of the ``d_head x d`` block of ``w_o`` that head writes
    through, or ``None`` when the layer no longer carries the head'''
    _check_head(model, layer, head)
    w = model.layers[layer]
    if head not in w.heads:
        return None
    p = w.heads.index(head)
    return w.w_o.data[p * w.d_head:(p + 1) * w.d_head].copy()


def ablated(model: Model, heads: Iterable[Tuple[int, int]]) -> Model:
    '''Copy of ``model`` with the ``w_o`` blocks of ``heads`` zeroed

    Shapes are unchanged. Heads already zeroed, or structurally absent,
    are left as they are.

    '''
    new_wo = {}
    for layer, head in heads:
        _check_head(model, layer, head)
        w = model.layers[layer]
        if head not in w.heads:
            continue
        arr = new_wo.get(layer)
        if arr is None:
            arr = new_wo[layer] = w.w_o.numpy()
        p = w.heads.index(head)
        arr[p * w.d_head:(p + 1) * w.d_head] = 0.0
    for layer, arr in new_wo.items():
        model = model.replace_layer(
            layer, model.layers[layer].replace(w_o=Tensor.wrap(arr)))
    return model


def ablate_perm(model: Model, layer: int, head: int) -> Model:
    '''Permanently ablates one head; repeating it is a no-op'''
    return ablated(model, [(layer, head)])


@contextlib.contextmanager
def ablate_temp(model: Model, layer: int, head: int):
    '''Evaluation context with one head ablated

    Yields the ablated copy. ``model`` itself is never modified, so on
    exit every weight is bit-identical to what it was before.

    Example::

        with ablate_temp(model, 0, 1) as m:
            score = eval_score(m, 'acc', id_data)

    '''
    yield ablate_perm(model, layer, head)


def eval_score(model: Model, kind: str, id_data, ood_data=None) -> float:
    '''Circuit score of a model

    ``acc`` is ID accuracy, ``ood`` the AUROC of the maximum softmax
    probability with ID samples as positives, ``avg`` their mean.

    Arguments:
        model: Model to evaluate.
        kind (str): One of ``acc``, ``ood`` and ``avg``.
        id_data: Labelled :class:`~hydraens.data.Dataset`.
        ood_data: :class:`~hydraens.data.Dataset`; required unless
            ``kind`` is ``acc``.

    '''
    if kind not in SCORE_KINDS:
        raise ConfigError('score kind has to be one of {}: {}'
                          .format(SCORE_KINDS, kind))
    if id_data is None or len(id_data) == 0:
        raise ContractError('eval_score needs ID data')
    if kind != 'acc' and (ood_data is None or len(ood_data) == 0):
        raise ContractError('score kind {} needs OOD data'.format(kind))

    d = model.config.d_model
    id_probs = predict_proba(model, id_data.tokens,
                             input_noise=id_data.embedding_noise(d))
    s_acc = accuracy(id_probs, id_data.labels)
    if kind == 'acc':
        return s_acc
    ood_probs = predict_proba(model, ood_data.tokens,
                              input_noise=ood_data.embedding_noise(d))
    s_ood = auroc(msp(id_probs), msp(ood_probs))
    if kind == 'ood':
        return s_ood
    return 0.5 * (s_acc + s_ood)
