'''Fusion of differently pruned members into one model

Streams are stacked member-major: rows ``[m*T, (m+1)*T)`` of the
``MT x d`` hidden state belong to member ``m``. Attention runs on the
``T x Md`` rearrangement through grouped projections; layer norms and
the merged MLP act on the stacked rows.

'''
import functools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hydraens.errors import ConfigError, DimensionError
from hydraens.fusion.gfc import gfc, pack_bias, pack_block_diag
from hydraens.numerics import Tensor, ops
from hydraens.transformer import (HeadMask, LayerWeights, Model,
                                  TransformerConfig, check_tokens,
                                  predict_proba, slice_layer)
from hydraens.transformer.layers import embed, mlp

MEMBER_FIELDS = ('w_q', 'b_q', 'w_k', 'b_k', 'w_v', 'b_v', 'w_o', 'b_o')
MLP_FIELDS = ('w1', 'b1', 'w2', 'b2')


@dataclass(frozen=True)
class MemberAttention:
    '''Attention weights of one member in one layer

    ``w_q``, ``w_k``, ``w_v`` are ``d x d_l`` and ``w_o`` is ``d_l x d``
    with ``d_l = len(heads) * d_head``; ``b_o`` is the member's full
    output bias.

    '''
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    heads: Tuple[int, ...]

    @property
    def width(self) -> int:
        return self.w_q.shape[1]


@dataclass(frozen=True)
class HydraLayer:
    members: Tuple[MemberAttention, ...]
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    d_head: int

    def __post_init__(self):
        if not self.members:
            raise ConfigError('a fused layer needs at least one member')
        d = self.ln1_gamma.shape[0]
        for i, m in enumerate(self.members):
            if m.width < self.d_head or m.width != len(m.heads) * self.d_head:
                raise DimensionError(
                    'member {} has width {} for heads {} of size {}'
                    .format(i, m.width, m.heads, self.d_head))
            if m.w_q.shape[0] != d or m.w_o.shape != (m.width, d):
                raise DimensionError('member {} projections do not match '
                                     'd_model {}'.format(i, d))
            expected = {
                'b_q': (m.width,), 'w_k': (d, m.width), 'b_k': (m.width,),
                'w_v': (d, m.width), 'b_v': (m.width,), 'b_o': (d,),
            }
            for name, shape in expected.items():
                if getattr(m, name).shape != shape:
                    raise DimensionError(
                        'member {} {} has shape {}, expected {}'
                        .format(i, name, getattr(m, name).shape, shape))

    @property
    def n_members(self) -> int:
        return len(self.members)

    @property
    def widths(self) -> Tuple[int, ...]:
        return tuple(m.width for m in self.members)

    def _packed(self, attr):
        return pack_block_diag([getattr(m, attr) for m in self.members])

    @functools.cached_property
    def gfc_q(self) -> Tensor:
        return self._packed('w_q')

    @functools.cached_property
    def gfc_k(self) -> Tensor:
        return self._packed('w_k')

    @functools.cached_property
    def gfc_v(self) -> Tensor:
        return self._packed('w_v')

    @functools.cached_property
    def gfc_o(self) -> Tensor:
        return self._packed('w_o')

    @functools.cached_property
    def biases(self) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        return tuple(pack_bias([getattr(m, attr) for m in self.members])
                     for attr in ('b_q', 'b_k', 'b_v', 'b_o'))


@dataclass(frozen=True)
class HydraModel:
    '''``M`` pruned members sharing embeddings, layer norms and
    classifier'''
    config: TransformerConfig
    token_embedding: Tensor
    pos_embedding: Tensor
    layers: Tuple[HydraLayer, ...]
    lnf_gamma: Tensor
    lnf_beta: Tensor
    w_cls: Tensor
    b_cls: Tensor
    masks: Tuple[HeadMask, ...]

    def __post_init__(self):
        if len(self.layers) != self.config.n_layers:
            raise ConfigError('hydra model has {} layers, config says {}'
                              .format(len(self.layers),
                                      self.config.n_layers))
        counts = {layer.n_members for layer in self.layers}
        if counts != {len(self.masks)}:
            raise ConfigError('layers disagree on the member count: {} '
                              '(masks: {})'.format(sorted(counts),
                                                   len(self.masks)))

    @property
    def n_members(self) -> int:
        return len(self.masks)


def merge_mlp(layers: Sequence[LayerWeights]) -> Tuple[Tensor, ...]:
    '''Entrywise mean of the members' ``w1``, ``b1``, ``w2``, ``b2``'''
    if not layers:
        raise ConfigError('merge_mlp needs at least one member')
    merged = []
    for attr in MLP_FIELDS:
        arrays = [getattr(w, attr).data for w in layers]
        if len({a.shape for a in arrays}) != 1:
            raise DimensionError('member {} shapes differ: {}'
                                 .format(attr, [a.shape for a in arrays]))
        first = arrays[0]
        if all(np.array_equal(first, a) for a in arrays[1:]):
            merged.append(getattr(layers[0], attr))
        else:
            merged.append(Tensor.wrap(np.mean(np.stack(arrays), axis=0)))
    return tuple(merged)


def _member_layer(w: LayerWeights, keep: Sequence[int], l: int,
                  m: int) -> LayerWeights:
    if tuple(w.heads) == tuple(keep):
        return w
    if not set(keep) <= set(w.heads):
        raise ConfigError('member {} layer {} carries heads {} but its mask '
                          'keeps {}'.format(m, l, w.heads, tuple(keep)))
    return slice_layer(w, keep)


def fuse(base: Model, members: Sequence[Tuple[HeadMask, Model]]
         ) -> HydraModel:
    '''Fuses ``members`` into one :class:`HydraModel`

    Each member is a ``(mask, model)`` pair whose model has either every
    head or exactly the heads its mask keeps. Embeddings, layer norms
    and the classifier come from ``base``; MLPs are averaged across
    members.

    '''
    if not members:
        raise ConfigError('fuse needs at least one member')
    cfg = base.config
    for i, (mask, model) in enumerate(members):
        if model.config != cfg:
            raise ConfigError('member {} config {} differs from the base {}'
                              .format(i, model.config, cfg))
        if (mask.n_layers, mask.n_heads) != (cfg.n_layers, cfg.n_heads):
            raise ConfigError('member {} mask shape {} does not match the '
                              'config'.format(i, mask.bits.shape))
    layers = []
    for l, shared in enumerate(base.layers):
        sliced = [_member_layer(model.layers[l], mask.survivors(l), l, m)
                  for m, (mask, model) in enumerate(members)]
        w1, b1, w2, b2 = merge_mlp([model.layers[l] for _, model in members])
        layers.append(HydraLayer(
            members=tuple(MemberAttention(
                **{f: getattr(w, f) for f in MEMBER_FIELDS}, heads=w.heads)
                for w in sliced),
            w1=w1, b1=b1, w2=w2, b2=b2,
            ln1_gamma=shared.ln1_gamma, ln1_beta=shared.ln1_beta,
            ln2_gamma=shared.ln2_gamma, ln2_beta=shared.ln2_beta,
            d_head=cfg.d_head))
    return HydraModel(
        config=cfg, token_embedding=base.token_embedding,
        pos_embedding=base.pos_embedding, layers=tuple(layers),
        lnf_gamma=base.lnf_gamma, lnf_beta=base.lnf_beta,
        w_cls=base.w_cls, b_cls=base.b_cls,
        masks=tuple(mask for mask, _ in members))


def member_model(hm: HydraModel, m: int) -> Model:
    '''Standalone model of member ``m``: its attention, the merged MLP
    and the shared trunk'''
    if not 0 <= m < hm.n_members:
        raise IndexError('member {} out of range ([0, {}))'
                         .format(m, hm.n_members))
    layers = []
    for layer in hm.layers:
        att = layer.members[m]
        layers.append(LayerWeights(
            **{f: getattr(att, f) for f in MEMBER_FIELDS},
            w1=layer.w1, b1=layer.b1, w2=layer.w2, b2=layer.b2,
            ln1_gamma=layer.ln1_gamma, ln1_beta=layer.ln1_beta,
            ln2_gamma=layer.ln2_gamma, ln2_beta=layer.ln2_beta,
            d_head=layer.d_head, heads=att.heads))
    return Model(config=hm.config, token_embedding=hm.token_embedding,
                 pos_embedding=hm.pos_embedding, layers=tuple(layers),
                 lnf_gamma=hm.lnf_gamma, lnf_beta=hm.lnf_beta,
                 w_cls=hm.w_cls, b_cls=hm.b_cls)


def fused_mha(x_tilde: Tensor, layer: HydraLayer) -> Tensor:
    '''Fused attention on ``(..., T, M*d)``

    Member ``m`` reads columns ``[m*d, (m+1)*d)`` and writes the same
    columns of the output.

    '''
    n = layer.n_members
    d = layer.ln1_gamma.shape[0]
    if x_tilde.shape[-1] != n * d:
        raise DimensionError('fused attention expects width {} (M={}, '
                             'd={}), got {}'.format(n * d, n, d,
                                                    x_tilde.shape[-1]))
    b_q, b_k, b_v, b_o = layer.biases
    dk = layer.d_head
    q = ops.split_heads(gfc(x_tilde, layer.gfc_q, b_q), dk)
    k = ops.split_heads(gfc(x_tilde, layer.gfc_k, b_k), dk)
    v = ops.split_heads(gfc(x_tilde, layer.gfc_v, b_v), dk)
    scores = ops.scale(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(dk))
    z = ops.merge_heads(ops.matmul(ops.softmax_rows(scores), v))
    return gfc(z, layer.gfc_o, b_o)


def fused_forward_layer(x: Tensor, layer: HydraLayer,
                        eps: float = 1e-5) -> Tensor:
    '''One fused layer on member-major stacked rows ``(..., M*T, d)``'''
    n = layer.n_members
    if x.ndim < 2 or x.shape[-2] % n:
        raise DimensionError('{} rows cannot hold {} stacked members'
                             .format(x.shape, n))
    x_hat = ops.layernorm(x, layer.ln1_gamma, layer.ln1_beta, eps)
    y = ops.add(ops.rows_to_cols(x, n),
                fused_mha(ops.rows_to_cols(x_hat, n), layer))
    y = ops.cols_to_rows(y, n)
    h = ops.layernorm(y, layer.ln2_gamma, layer.ln2_beta, eps)
    return ops.add(y, mlp(h, layer.w1, layer.b1, layer.w2, layer.b2))


def _stream_logits(tokens, hm: HydraModel, input_noise=None) -> Tensor:
    '''Logits of every member stream, ``(..., M, C)``'''
    n = hm.n_members
    x = embed(tokens, hm, input_noise)
    t = hm.config.seq_len
    x = ops.concat([x] * n, axis=-2)
    for layer in hm.layers:
        x = fused_forward_layer(x, layer, hm.config.ln_eps)
    x = ops.layernorm(x, hm.lnf_gamma, hm.lnf_beta, hm.config.ln_eps)
    lead = x.shape[:-2]
    x = ops.reshape(x, lead + (n, t, hm.config.d_model))
    cls = ops.take(x, [0], axis=-2)
    logits = ops.add(ops.matmul(cls, hm.w_cls), hm.b_cls)
    return ops.reshape(logits, lead + (n, hm.config.n_classes))


def member_probs(tokens, hm: HydraModel, input_noise=None,
                 batch_size: int = 512) -> np.ndarray:
    '''Per-stream probabilities, ``(N, M, C)`` (``(M, C)`` for one
    sequence)'''
    tokens = check_tokens(tokens, hm)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None]
        if input_noise is not None:
            input_noise = np.asarray(input_noise)[None]
    if not len(tokens):
        return np.empty((0, hm.n_members, hm.config.n_classes))
    out = []
    for i in range(0, len(tokens), batch_size):
        noise = None if input_noise is None \
            else input_noise[i:i + batch_size]
        logits = _stream_logits(tokens[i:i + batch_size], hm, noise)
        out.append(ops.softmax_rows(logits).data)
    probs = np.concatenate(out, axis=0)
    return probs[0] if single else probs


def hydra_predict(tokens, hm: HydraModel, input_noise=None,
                  batch_size: int = 512) -> np.ndarray:
    '''Ensemble probabilities: the mean of the member streams' softmax'''
    return member_probs(tokens, hm, input_noise, batch_size).mean(axis=-2)


def ensemble_predict(models: Sequence[Model], tokens,
                     masks: Optional[Sequence[Optional[HeadMask]]] = None,
                     input_noise=None) -> np.ndarray:
    '''Mean softmax of standalone models'''
    if not models:
        raise ConfigError('ensemble_predict needs at least one model')
    if masks is None:
        masks = [None] * len(models)
    probs: List[np.ndarray] = [
        predict_proba(m, tokens, mask, input_noise=input_noise)
        for m, mask in zip(models, masks)]
    return np.mean(np.stack(probs), axis=0)
