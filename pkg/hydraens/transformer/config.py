import dataclasses
from dataclasses import dataclass

from hydraens.errors import ConfigError


@dataclass(frozen=True)
class TransformerConfig:
    '''Architecture of a pre-norm encoder classifier

    Token id ``0`` is reserved for the classification token, which
    always sits at position 0; content tokens use ids ``1..V-1``.

    Arguments:
        n_layers (int): Number of encoder layers ``L``.
        d_model (int): Hidden size ``d``.
        n_heads (int): Attention heads per layer ``H``; must divide
            ``d_model``.
        d_ff (int): Hidden size of the MLP.
        seq_len (int): Sequence length ``T``, classification token
            included.
        vocab_size (int): Vocabulary size ``V``, classification token
            included.
        n_classes (int): Number of output classes ``C``.
        ln_eps (float): Epsilon of every layer normalization.

    '''
    n_layers: int = 2
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    seq_len: int = 16
    vocab_size: int = 64
    n_classes: int = 4
    ln_eps: float = 1e-5

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if f.name == 'ln_eps':
                continue
            value = getattr(self, f.name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError('{} has to be an int: {!r}'
                                  .format(f.name, value))
            if value < 1:
                raise ConfigError('{} has to be >= 1: {}'
                                  .format(f.name, value))
        if self.d_model % self.n_heads:
            raise ConfigError('d_model {} is not divisible by n_heads {}'
                              .format(self.d_model, self.n_heads))
        if self.ln_eps < 0:
            raise ConfigError('ln_eps has to be >= 0: {}'
                              .format(self.ln_eps))

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> 'TransformerConfig':
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError('unknown config fields: {}'
                              .format(sorted(unknown)))
        return cls(**d)
