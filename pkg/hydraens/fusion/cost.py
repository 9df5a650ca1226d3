'''Closed-form parameter and multiply-add counts

Per-layer weight counts leave biases out:

* standard layer: ``4 d^2 + 2 d d_ff`` (``12 d^2`` when ``d_ff = 4d``)
* fused layer: ``4 d sum_m d_l^(m) + 2 d d_ff`` with
  ``d_l^(m) = H_l^(m) d_head``
* deep ensemble: ``M`` standard layers

Whole-model totals add biases, layer norms, the token and position
embeddings and the classifier. Multiply-adds count the projections, the
two attention products and the MLP of every layer plus the classifier,
for one sequence of length ``T``.

'''
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from hydraens.errors import ConfigError
from hydraens.transformer import HeadMask, TransformerConfig


@dataclass(frozen=True)
class CostReport:
    seq_len: int
    n_members: int
    layer_standard: Tuple[int, ...]
    layer_hydra: Tuple[int, ...]
    layer_deep: Tuple[int, ...]
    params_standard: int
    params_hydra: int
    params_deep: int
    mult_adds_standard: int
    mult_adds_hydra: int
    mult_adds_deep: int

    @property
    def within_upper_bound(self) -> bool:
        "Every fused layer is at most ``M`` standard layers."
        return all(h <= d for h, d in zip(self.layer_hydra, self.layer_deep))

    @property
    def within_lower_bound(self) -> bool:
        "Every fused layer is at least one standard layer."
        return all(h >= s for h, s in zip(self.layer_hydra,
                                          self.layer_standard))

    def to_text(self) -> str:
        lines = ['seq_len = {}'.format(self.seq_len),
                 'members = {}'.format(self.n_members),
                 'params_standard = {}'.format(self.params_standard),
                 'params_hydra = {}'.format(self.params_hydra),
                 'params_deep = {}'.format(self.params_deep),
                 'mult_adds_standard = {}'.format(self.mult_adds_standard),
                 'mult_adds_hydra = {}'.format(self.mult_adds_hydra),
                 'mult_adds_deep = {}'.format(self.mult_adds_deep),
                 'within_upper_bound = {}'.format(self.within_upper_bound),
                 'within_lower_bound = {}'.format(self.within_lower_bound),
                 'layer\tstandard\thydra\tdeep']
        for l, row in enumerate(zip(self.layer_standard, self.layer_hydra,
                                    self.layer_deep)):
            lines.append('{}\t{}\t{}\t{}'.format(l, *row))
        return '\n'.join(lines) + '\n'


def standard_layer_weights(cfg: TransformerConfig) -> int:
    d = cfg.d_model
    return 4 * d * d + 2 * d * cfg.d_ff


def hydra_layer_weights(cfg: TransformerConfig,
                        widths: Sequence[int]) -> int:
    d = cfg.d_model
    return 4 * d * sum(widths) + 2 * d * cfg.d_ff


def _layer_biases(cfg, widths):
    d = cfg.d_model
    # q/k/v slices, one full output bias per member, MLP, two layer norms
    return 3 * sum(widths) + len(widths) * d + cfg.d_ff + d + 4 * d


def _trunk(cfg):
    d = cfg.d_model
    return (cfg.vocab_size * d + cfg.seq_len * d + 2 * d
            + d * cfg.n_classes + cfg.n_classes)


def _layer_mult_adds(cfg, widths, t):
    d = cfg.d_model
    w = sum(widths)
    return (4 * t * d * w + 2 * t * t * w
            + 2 * len(widths) * t * d * cfg.d_ff)


def cost_report(cfg: TransformerConfig, masks: Sequence[HeadMask],
                n_members: Optional[int] = None,
                seq_len: Optional[int] = None) -> CostReport:
    '''Costs of a standard model, the fused model of ``masks`` and a
    deep ensemble of ``M`` standard models

    Arguments:
        cfg: Architecture.
        masks: One mask per member.
        n_members (int): ``M``; defaults to ``len(masks)``.
        seq_len (int): Sequence length for multiply-adds; defaults to
            ``cfg.seq_len``.

    '''
    m = len(masks) if n_members is None else n_members
    if m < 1 or m != len(masks):
        raise ConfigError('{} members but {} masks'.format(m, len(masks)))
    for i, mask in enumerate(masks):
        if (mask.n_layers, mask.n_heads) != (cfg.n_layers, cfg.n_heads):
            raise ConfigError('mask {} has shape {}, config is ({}, {})'
                              .format(i, mask.bits.shape, cfg.n_layers,
                                      cfg.n_heads))
    t = cfg.seq_len if seq_len is None else seq_len
    full = [cfg.d_model]
    widths = [[mask.counts[l] * cfg.d_head for mask in masks]
              for l in range(cfg.n_layers)]

    standard = tuple(standard_layer_weights(cfg)
                     for _ in range(cfg.n_layers))
    hydra = tuple(hydra_layer_weights(cfg, w) for w in widths)
    deep = tuple(m * s for s in standard)

    trunk = _trunk(cfg)
    one = sum(standard) + cfg.n_layers * _layer_biases(cfg, full) + trunk
    fused = sum(hydra) + sum(_layer_biases(cfg, w) for w in widths) + trunk

    classifier = cfg.d_model * cfg.n_classes
    ma_standard = cfg.n_layers * _layer_mult_adds(cfg, full, t) + classifier
    ma_hydra = sum(_layer_mult_adds(cfg, w, t) for w in widths) \
        + m * classifier
    return CostReport(
        seq_len=t, n_members=m,
        layer_standard=standard, layer_hydra=hydra, layer_deep=deep,
        params_standard=one, params_hydra=fused, params_deep=m * one,
        mult_adds_standard=ma_standard, mult_adds_hydra=ma_hydra,
        mult_adds_deep=m * ma_standard)
