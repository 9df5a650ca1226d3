from dataclasses import dataclass
from typing import Optional, Tuple

from hydraens.errors import ConfigError
from hydraens.transformer import TransformerConfig

MODES = ('per-layer', 'global')


@dataclass(frozen=True)
class PruneBudget:
    '''How many heads to remove

    ``per_layer`` gives ``r_l`` for every layer; ``total`` gives a global
    count ``B``. Exactly one of them is set.

    '''
    per_layer: Optional[Tuple[int, ...]] = None
    total: Optional[int] = None

    def __post_init__(self):
        if (self.per_layer is None) == (self.total is None):
            raise ConfigError('set exactly one of per_layer and total')
        if self.per_layer is not None:
            object.__setattr__(self, 'per_layer',
                               tuple(int(r) for r in self.per_layer))
            if any(r < 0 for r in self.per_layer):
                raise ConfigError('per-layer budget has to be >= 0: {}'
                                  .format(self.per_layer))
        elif self.total < 0:
            raise ConfigError('global budget has to be >= 0: {}'
                              .format(self.total))

    @classmethod
    def uniform(cls, n_layers: int, r: int) -> 'PruneBudget':
        return cls(per_layer=(r,) * n_layers)

    @property
    def mode(self) -> str:
        return 'per-layer' if self.per_layer is not None else 'global'

    @property
    def count(self) -> int:
        "Total number of heads removed."
        return sum(self.per_layer) if self.per_layer is not None \
            else self.total

    def validate(self, cfg: TransformerConfig) -> 'PruneBudget':
        '''Checks the one-survivor-per-layer rule against ``cfg``'''
        if self.per_layer is not None:
            if len(self.per_layer) != cfg.n_layers:
                raise ConfigError('per-layer budget has {} entries for {} '
                                  'layers'.format(len(self.per_layer),
                                                  cfg.n_layers))
            for l, r in enumerate(self.per_layer):
                if r >= cfg.n_heads:
                    raise ConfigError(
                        'budget {} for layer {} leaves no head of {}'
                        .format(r, l, cfg.n_heads))
        else:
            check_total(self.total, cfg)
        return self


def max_removable(cfg: TransformerConfig) -> int:
    return cfg.n_layers * (cfg.n_heads - 1)


def check_total(total: int, cfg: TransformerConfig) -> None:
    if not 0 <= total <= max_removable(cfg):
        raise ConfigError('global budget {} is outside [0, {}] for {} '
                          'layers of {} heads'
                          .format(total, max_removable(cfg), cfg.n_layers,
                                  cfg.n_heads))
