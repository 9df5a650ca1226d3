import dataclasses
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from hydraens.errors import ConfigError, ContractError, DimensionError
from hydraens.numerics import Tensor, default_dtype, ops
from hydraens.transformer.config import TransformerConfig


class HeadMask:
    '''Per-layer survival mask of attention heads

    ``mask[l, h]`` is ``True`` when head ``h`` of layer ``l`` survives.
    Every layer keeps at least one head. Masks are immutable and
    hashable, so they can be compared and deduplicated across members.

    '''

    __slots__ = ('_bits',)

    def __init__(self, bits):
        arr = np.array(bits, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ContractError('head mask has to be a non-empty L x H '
                                'table: shape {}'.format(arr.shape))
        empty = np.flatnonzero(~arr.any(axis=1))
        if empty.size:
            raise ContractError('head mask leaves layer {} without heads'
                                .format(int(empty[0])))
        arr.setflags(write=False)
        self._bits = arr

    @classmethod
    def full(cls, n_layers: int, n_heads: int) -> 'HeadMask':
        return cls(np.ones((n_layers, n_heads), dtype=bool))

    @classmethod
    def from_removed(cls, n_layers: int, n_heads: int,
                     removed: Iterable[Tuple[int, int]]) -> 'HeadMask':
        bits = np.ones((n_layers, n_heads), dtype=bool)
        for l, h in removed:
            bits[l, h] = False
        return cls(bits)

    @property
    def n_layers(self) -> int:
        return self._bits.shape[0]

    @property
    def n_heads(self) -> int:
        return self._bits.shape[1]

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    def row(self, layer: int) -> np.ndarray:
        return self._bits[layer]

    def survivors(self, layer: int) -> Tuple[int, ...]:
        return tuple(int(h) for h in np.flatnonzero(self._bits[layer]))

    def removed(self) -> List[Tuple[int, int]]:
        ls, hs = np.nonzero(~self._bits)
        return [(int(l), int(h)) for l, h in zip(ls, hs)]

    @property
    def counts(self) -> Tuple[int, ...]:
        "Surviving heads per layer."
        return tuple(int(c) for c in self._bits.sum(axis=1))

    def can_remove(self, layer: int, head: int) -> bool:
        return bool(self._bits[layer, head]) and self.counts[layer] > 1

    def without(self, layer: int, head: int) -> 'HeadMask':
        if not (0 <= layer < self.n_layers and 0 <= head < self.n_heads):
            raise IndexError('head ({}, {}) out of range ([0, {}) x [0, {}))'
                             .format(layer, head, self.n_layers,
                                     self.n_heads))
        bits = self._bits.copy()
        bits[layer, head] = False
        return HeadMask(bits)

    def hamming(self, other: 'HeadMask') -> int:
        if self._bits.shape != other._bits.shape:
            raise DimensionError('masks differ in shape: {} vs {}'
                                 .format(self._bits.shape,
                                         other._bits.shape))
        return int((self._bits != other._bits).sum())

    def to_text(self) -> str:
        return ','.join(''.join('1' if b else '0' for b in row)
                        for row in self._bits)

    @classmethod
    def from_text(cls, text: str) -> 'HeadMask':
        rows = text.strip().split(',')
        if any(set(r) - {'0', '1'} for r in rows):
            raise ContractError('bad head mask text: {!r}'.format(text))
        if len({len(r) for r in rows}) != 1:
            raise ContractError('head mask rows differ in length: {!r}'
                                .format(text))
        return cls([[c == '1' for c in r] for r in rows])

    def __eq__(self, other):
        if not isinstance(other, HeadMask):
            return NotImplemented
        return self._bits.shape == other._bits.shape and \
            bool((self._bits == other._bits).all())

    def __hash__(self):
        return hash((self._bits.shape, self._bits.tobytes()))

    def __repr__(self):
        return 'HeadMask({})'.format(self.to_text())


# (attribute, serialized name) pairs in canonical order
LAYER_FIELDS = (
    ('w_q', 'W_Q'), ('b_q', 'b_Q'),
    ('w_k', 'W_K'), ('b_k', 'b_K'),
    ('w_v', 'W_V'), ('b_v', 'b_V'),
    ('w_o', 'W_O'), ('b_o', 'b_O'),
    ('w1', 'mlp.W1'), ('b1', 'mlp.b1'),
    ('w2', 'mlp.W2'), ('b2', 'mlp.b2'),
    ('ln1_gamma', 'ln1.gamma'), ('ln1_beta', 'ln1.beta'),
    ('ln2_gamma', 'ln2.gamma'), ('ln2_beta', 'ln2.beta'),
)

ATTENTION_FIELDS = ('w_q', 'b_q', 'w_k', 'b_k', 'w_v', 'b_v', 'w_o')


@dataclass(frozen=True)
class LayerWeights:
    '''Parameters of one pre-norm encoder layer

    Projections multiply from the right (``x @ w_q``). Head ``i`` of the
    layer owns columns ``[i*d_head, (i+1)*d_head)`` of ``w_q``, ``w_k``,
    ``w_v`` and the same rows of ``w_o``. ``heads`` lists the original
    head ids in that order, so a structurally pruned layer still knows
    which heads it carries.

    '''
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    d_head: int
    heads: Tuple[int, ...]

    def __post_init__(self):
        d, width = self.w_q.shape
        if width != self.d_head * len(self.heads):
            raise DimensionError(
                'projection width {} does not hold {} heads of size {}'
                .format(width, len(self.heads), self.d_head))
        expected = {
            'b_q': (width,), 'w_k': (d, width), 'b_k': (width,),
            'w_v': (d, width), 'b_v': (width,), 'w_o': (width, d),
            'b_o': (d,), 'b1': (self.w1.shape[1],),
            'w2': (self.w1.shape[1], d), 'b2': (d,),
            'ln1_gamma': (d,), 'ln1_beta': (d,),
            'ln2_gamma': (d,), 'ln2_beta': (d,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError('{} has shape {}, expected {}'
                                     .format(name, getattr(self, name).shape,
                                             shape))
        if self.w1.shape[0] != d:
            raise DimensionError('w1 has shape {}, expected ({}, *)'
                                 .format(self.w1.shape, d))

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    def head_columns(self, positions: Sequence[int]) -> np.ndarray:
        "Column indices of the heads at ``positions`` in this layer."
        dk = self.d_head
        return np.concatenate([np.arange(p * dk, (p + 1) * dk)
                               for p in positions]).astype(np.int64)

    def tensors(self) -> Dict[str, Tensor]:
        return {attr: getattr(self, attr) for attr, _ in LAYER_FIELDS}

    def replace(self, **changes) -> 'LayerWeights':
        return dataclasses.replace(self, **changes)


def slice_layer(w: LayerWeights, keep: Sequence[int]) -> LayerWeights:
    '''Structurally keeps only the original heads ``keep``

    Query, key and value biases travel with their head; ``b_o`` is kept
    whole. The result carries the heads in the order given.

    '''
    if not keep:
        raise ContractError('a layer needs at least one surviving head')
    try:
        positions = [w.heads.index(h) for h in keep]
    except ValueError:
        raise ContractError('heads {} are not all present in layer with '
                            'heads {}'.format(tuple(keep), w.heads))
    if positions == list(range(w.n_heads)):
        return w
    return slice_positions(w, positions)


def slice_positions(w: LayerWeights,
                    positions: Sequence[int]) -> LayerWeights:
    "Keeps the heads at ``positions`` of the layer, in that order."
    cols = w.head_columns(positions)
    return w.replace(
        w_q=ops.take(w.w_q, cols, axis=1), b_q=ops.take(w.b_q, cols),
        w_k=ops.take(w.w_k, cols, axis=1), b_k=ops.take(w.b_k, cols),
        w_v=ops.take(w.w_v, cols, axis=1), b_v=ops.take(w.b_v, cols),
        w_o=ops.take(w.w_o, cols, axis=0),
        heads=tuple(w.heads[p] for p in positions))


@dataclass(frozen=True)
class Model:
    '''A pre-norm encoder with a linear classifier on the CLS position

    Layers may carry fewer heads than ``config.n_heads`` after
    :func:`apply_mask`.

    '''
    config: TransformerConfig
    token_embedding: Tensor
    pos_embedding: Tensor
    layers: Tuple[LayerWeights, ...]
    lnf_gamma: Tensor
    lnf_beta: Tensor
    w_cls: Tensor
    b_cls: Tensor

    def __post_init__(self):
        cfg = self.config
        if len(self.layers) != cfg.n_layers:
            raise ConfigError('model has {} layers, config says {}'
                              .format(len(self.layers), cfg.n_layers))
        d = cfg.d_model
        expected = {
            'token_embedding': (cfg.vocab_size, d),
            'pos_embedding': (cfg.seq_len, d),
            'lnf_gamma': (d,), 'lnf_beta': (d,),
            'w_cls': (d, cfg.n_classes), 'b_cls': (cfg.n_classes,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError('{} has shape {}, expected {}'
                                     .format(name, getattr(self, name).shape,
                                             shape))
        for l, w in enumerate(self.layers):
            if w.d_model != d or w.d_head != cfg.d_head \
                    or w.w1.shape[1] != cfg.d_ff:
                raise ConfigError('layer {} does not match the config'
                                  .format(l))

    @property
    def heads(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(w.heads for w in self.layers)

    @property
    def is_pruned(self) -> bool:
        return any(w.n_heads != self.config.n_heads for w in self.layers)

    def mask(self) -> HeadMask:
        "The mask describing which original heads the layers carry."
        bits = np.zeros((self.config.n_layers, self.config.n_heads),
                        dtype=bool)
        for l, w in enumerate(self.layers):
            bits[l, list(w.heads)] = True
        return HeadMask(bits)

    def parameters(self) -> Dict[str, Tensor]:
        '''Every parameter tensor by its serialized name, in canonical
        order'''
        params = {
            'embed.token': self.token_embedding,
            'embed.pos': self.pos_embedding,
        }
        for l, w in enumerate(self.layers):
            for attr, name in LAYER_FIELDS:
                params['layer{}.shared.{}'.format(l, name)] = \
                    getattr(w, attr)
        params['final_ln.gamma'] = self.lnf_gamma
        params['final_ln.beta'] = self.lnf_beta
        params['classifier.W'] = self.w_cls
        params['classifier.b'] = self.b_cls
        return params

    def with_parameters(self, params: Dict[str, Tensor]) -> 'Model':
        '''Returns a copy with the named tensors replaced

        Names missing from ``params`` keep their current tensor.

        '''
        current = self.parameters()
        unknown = set(params) - set(current)
        if unknown:
            raise ContractError('unknown parameters: {}'
                                .format(sorted(unknown)))
        current.update(params)
        layers = []
        for l, w in enumerate(self.layers):
            changes = {attr: current['layer{}.shared.{}'.format(l, name)]
                       for attr, name in LAYER_FIELDS}
            layers.append(w.replace(**changes))
        return dataclasses.replace(
            self,
            token_embedding=current['embed.token'],
            pos_embedding=current['embed.pos'],
            layers=tuple(layers),
            lnf_gamma=current['final_ln.gamma'],
            lnf_beta=current['final_ln.beta'],
            w_cls=current['classifier.W'],
            b_cls=current['classifier.b'])

    def replace_layer(self, index: int, layer: LayerWeights) -> 'Model':
        layers = list(self.layers)
        layers[index] = layer
        return dataclasses.replace(self, layers=tuple(layers))


def _normal(rng, shape, std):
    return Tensor.wrap((rng.standard_normal(shape) * std)
                       .astype(default_dtype()))


def _const(shape, value):
    return Tensor.wrap(np.full(shape, value, dtype=default_dtype()))


def init_layer(cfg: TransformerConfig,
               rng: np.random.Generator) -> LayerWeights:
    d, f = cfg.d_model, cfg.d_ff
    s = 1.0 / np.sqrt(d)
    return LayerWeights(
        w_q=_normal(rng, (d, d), s), b_q=_const((d,), 0.0),
        w_k=_normal(rng, (d, d), s), b_k=_const((d,), 0.0),
        w_v=_normal(rng, (d, d), s), b_v=_const((d,), 0.0),
        w_o=_normal(rng, (d, d), s), b_o=_const((d,), 0.0),
        w1=_normal(rng, (d, f), s), b1=_const((f,), 0.0),
        w2=_normal(rng, (f, d), 1.0 / np.sqrt(f)), b2=_const((d,), 0.0),
        ln1_gamma=_const((d,), 1.0), ln1_beta=_const((d,), 0.0),
        ln2_gamma=_const((d,), 1.0), ln2_beta=_const((d,), 0.0),
        d_head=cfg.d_head, heads=tuple(range(cfg.n_heads)))


def init_model(cfg: TransformerConfig, seed: int = 0) -> Model:
    '''Randomly initialized model, deterministic in ``seed``'''
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    token = _normal(rng, (cfg.vocab_size, d), 1.0)
    pos = _normal(rng, (cfg.seq_len, d), 0.1)
    layers = tuple(init_layer(cfg, rng) for _ in range(cfg.n_layers))
    return Model(
        config=cfg, token_embedding=token, pos_embedding=pos,
        layers=layers,
        lnf_gamma=_const((d,), 1.0), lnf_beta=_const((d,), 0.0),
        w_cls=_normal(rng, (d, cfg.n_classes), 1.0 / np.sqrt(d)),
        b_cls=_const((cfg.n_classes,), 0.0))


def apply_mask(model: Model, mask: Optional[HeadMask]) -> Model:
    '''Structurally removes the heads ``mask`` drops

    The mask is expressed in original head ids. Layers already narrower
    than the mask must contain every head the mask keeps.

    '''
    if mask is None:
        return model
    cfg = model.config
    if (mask.n_layers, mask.n_heads) != (cfg.n_layers, cfg.n_heads):
        raise DimensionError('mask shape {} does not match config ({}, {})'
                             .format(mask.bits.shape, cfg.n_layers,
                                     cfg.n_heads))
    layers = tuple(slice_layer(w, mask.survivors(l))
                   for l, w in enumerate(model.layers))
    return dataclasses.replace(model, layers=layers)
