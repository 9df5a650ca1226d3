import math
from typing import Optional

import numpy as np

from hydraens.errors import ContractError, DimensionError
from hydraens.numerics import Tensor, as_tensor, ops
from hydraens.transformer.model import (HeadMask, LayerWeights, Model,
                                        slice_positions)

REALIZATIONS = ('structural', 'ablation')


def attention_heads(x_hat: Tensor, w_q: Tensor, b_q: Tensor, w_k: Tensor,
                    b_k: Tensor, w_v: Tensor, b_v: Tensor,
                    d_head: int) -> Tensor:
    '''Scaled dot-product attention for every head of the projections

    Returns the per-head outputs with shape ``(..., H, T, d_head)``.

    '''
    q = ops.split_heads(ops.add(ops.matmul(x_hat, w_q), b_q), d_head)
    k = ops.split_heads(ops.add(ops.matmul(x_hat, w_k), b_k), d_head)
    v = ops.split_heads(ops.add(ops.matmul(x_hat, w_v), b_v), d_head)
    scores = ops.scale(ops.matmul(q, ops.swap_last(k)),
                       1.0 / math.sqrt(d_head))
    return ops.matmul(ops.softmax_rows(scores), v)


def _check_row(row, w: LayerWeights) -> np.ndarray:
    if row is None:
        return np.ones(w.n_heads, dtype=bool)
    row = np.asarray(row, dtype=bool)
    if row.shape != (w.n_heads,):
        raise DimensionError('mask row of length {} for a layer with {} '
                             'heads'.format(row.shape, w.n_heads))
    if not row.any():
        raise ContractError('mask row kills every head of the layer')
    return row


def mha(x_hat: Tensor, w: LayerWeights, row=None,
        realization: str = 'structural') -> Tensor:
    '''Multi-head attention restricted to the heads ``row`` keeps

    Arguments:
        x_hat: Normalized input, ``(..., T, d)``.
        w: Layer weights.
        row: Boolean survival flags, one per head the layer carries.
            ``None`` keeps all of them.
        realization (str): ``"structural"`` slices the surviving head
            blocks out of the projections; ``"ablation"`` keeps the
            shapes and zeroes the ``w_o`` rows of removed heads. Both
            give the same output.

    '''
    row = _check_row(row, w)
    x_hat = as_tensor(x_hat)
    if x_hat.shape[-1] != w.d_model:
        raise DimensionError('mha input width {} != d_model {}'
                             .format(x_hat.shape[-1], w.d_model))
    if realization == 'structural':
        if not row.all():
            w = slice_positions(w, np.flatnonzero(row))
        w_o = w.w_o
    elif realization == 'ablation':
        keep = np.repeat(row, w.d_head).astype(w.w_o.dtype)[:, None]
        w_o = ops.mul(w.w_o, Tensor.wrap(keep))
    else:
        raise ValueError('realization has to be one of {}: {}'
                         .format(REALIZATIONS, realization))
    z = ops.merge_heads(attention_heads(x_hat, w.w_q, w.b_q, w.w_k, w.b_k,
                                        w.w_v, w.b_v, w.d_head))
    return ops.add(ops.matmul(z, w_o), w.b_o)


def mlp(x_hat: Tensor, w1: Tensor, b1: Tensor, w2: Tensor,
        b2: Tensor) -> Tensor:
    h = ops.gelu(ops.add(ops.matmul(x_hat, w1), b1))
    return ops.add(ops.matmul(h, w2), b2)


def forward_layer(x: Tensor, w: LayerWeights, row=None,
                  realization: str = 'structural',
                  eps: float = 1e-5) -> Tensor:
    '''Pre-norm residual layer: ``y = x + MHA(LN1(x))`` then
    ``y + MLP(LN2(y))``'''
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-1] != w.d_model:
        raise DimensionError('layer input has shape {}, expected (..., T, {})'
                             .format(x.shape, w.d_model))
    y = ops.add(x, mha(ops.layernorm(x, w.ln1_gamma, w.ln1_beta, eps),
                       w, row, realization))
    h = ops.layernorm(y, w.ln2_gamma, w.ln2_beta, eps)
    return ops.add(y, mlp(h, w.w1, w.b1, w.w2, w.b2))


def check_tokens(tokens, model_or_config) -> np.ndarray:
    cfg = getattr(model_or_config, 'config', model_or_config)
    tokens = np.asarray(tokens)
    if tokens.ndim not in (1, 2) or tokens.shape[-1] != cfg.seq_len:
        raise DimensionError('tokens have shape {}, expected (..., {})'
                             .format(tokens.shape, cfg.seq_len))
    if not np.issubdtype(tokens.dtype, np.integer):
        raise DimensionError('tokens have to be integers: {}'
                             .format(tokens.dtype))
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        bad = tokens.max() if tokens.max() >= cfg.vocab_size \
            else tokens.min()
        raise IndexError('token {} out of range ([0, {}))'
                         .format(int(bad), cfg.vocab_size))
    return tokens.astype(np.int64)


def embed(tokens, model: Model, input_noise=None) -> Tensor:
    tokens = check_tokens(tokens, model)
    x = ops.add(ops.take(model.token_embedding, tokens),
                model.pos_embedding)
    if input_noise is not None:
        x = ops.add(x, Tensor.wrap(np.asarray(input_noise, dtype=x.dtype)))
    return x


def layer_rows(model: Model, mask: Optional[HeadMask]):
    "Per-layer survival rows of ``mask`` over the heads each layer carries."
    if mask is None:
        return [None] * len(model.layers)
    cfg = model.config
    if (mask.n_layers, mask.n_heads) != (cfg.n_layers, cfg.n_heads):
        raise DimensionError('mask shape {} does not match config ({}, {})'
                             .format(mask.bits.shape, cfg.n_layers,
                                     cfg.n_heads))
    return [mask.row(l)[list(w.heads)] for l, w in enumerate(model.layers)]


def classify(x: Tensor, model: Model) -> Tensor:
    "Final LN and classifier on position 0 of ``(..., T, d)`` states."
    x = ops.layernorm(x, model.lnf_gamma, model.lnf_beta,
                      model.config.ln_eps)
    cls = ops.take(x, [0], axis=-2)
    logits = ops.add(ops.matmul(cls, model.w_cls), model.b_cls)
    return ops.reshape(logits, x.shape[:-2] + (model.config.n_classes,))


def forward_model(tokens, model: Model, mask: Optional[HeadMask] = None,
                  realization: str = 'structural',
                  input_noise=None) -> Tensor:
    '''Class logits for one sequence (``T``) or a batch (``N x T``)

    Arguments:
        tokens: Integer token ids.
        model: The model.
        mask: Heads to keep, in original head ids; ``None`` runs every
            head the layers carry.
        realization (str): How removed heads are dropped, see
            :func:`mha`.
        input_noise: Optional array added to the embeddings, shaped like
            them.

    '''
    x = embed(tokens, model, input_noise)
    eps = model.config.ln_eps
    for w, row in zip(model.layers, layer_rows(model, mask)):
        x = forward_layer(x, w, row, realization, eps)
    return classify(x, model)


def predict_proba(model: Model, tokens, mask: Optional[HeadMask] = None,
                  input_noise=None, batch_size: int = 512) -> np.ndarray:
    '''Softmax probabilities, ``N x C``, computed in batches'''
    tokens = check_tokens(tokens, model)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None]
        if input_noise is not None:
            input_noise = np.asarray(input_noise)[None]
    out = []
    for i in range(0, len(tokens), batch_size):
        noise = None if input_noise is None \
            else input_noise[i:i + batch_size]
        logits = forward_model(tokens[i:i + batch_size], model, mask,
                               input_noise=noise)
        out.append(ops.softmax_rows(logits).data)
    probs = np.concatenate(out, axis=0) if out \
        else np.zeros((0, model.config.n_classes))
    return probs[0] if single else probs


def head_outputs(model: Model, tokens, layer: int,
                 mask: Optional[HeadMask] = None,
                 input_noise=None) -> np.ndarray:
    '''CLS-position output of every head of ``layer``

    Returns an array of shape ``(N, H_l, d_head)`` with the heads in the
    order the layer carries them.

    '''
    if not 0 <= layer < model.config.n_layers:
        raise IndexError('layer {} out of range ([0, {}))'
                         .format(layer, model.config.n_layers))
    tokens = check_tokens(tokens, model)
    if tokens.ndim == 1:
        tokens = tokens[None]
    x = embed(tokens, model, input_noise)
    rows = layer_rows(model, mask)
    eps = model.config.ln_eps
    for w, row in zip(model.layers[:layer], rows[:layer]):
        x = forward_layer(x, w, row, eps=eps)
    w = model.layers[layer]
    x_hat = ops.layernorm(x, w.ln1_gamma, w.ln1_beta, eps)
    z = attention_heads(x_hat, w.w_q, w.b_q, w.w_k, w.b_k, w.w_v, w.b_v,
                        w.d_head)
    return np.array(z.data[:, :, 0, :])
