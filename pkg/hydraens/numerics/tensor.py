import contextlib
import threading

import numpy as np

_PRECISIONS = {
    'verify': np.float64,
    'bench': np.float32,
}

_state = threading.local()


def get_precision() -> str:
    "Returns the precision mode of the calling thread."
    return getattr(_state, 'precision', 'verify')


def set_precision(mode: str) -> None:
    '''Sets the scalar precision of newly created tensors

    Arguments:
        mode (str): ``"verify"`` for 64-bit scalars, which every oracle
            tolerance assumes, or ``"bench"`` for 32-bit scalars.

    '''
    if mode not in _PRECISIONS:
        raise ValueError('precision has to be one of {}: {} is specified'
                         .format(sorted(_PRECISIONS), mode))
    _state.precision = mode


@contextlib.contextmanager
def precision(mode: str):
    prev = get_precision()
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(prev)


def default_dtype():
    return _PRECISIONS[get_precision()]


class Tensor:
    '''Immutable dense array of real scalars

    The data lives in a read-only row-major ``numpy.ndarray``. All
    arithmetic goes through :mod:`hydraens.numerics.ops`, which records
    the operation on the active :class:`~hydraens.numerics.GradTape`.

    Tensors hash by identity so they can key gradient maps.

    '''

    __slots__ = ('data', '__weakref__')

    def __init__(self, data, dtype=None):
        arr = np.array(data, dtype=dtype or default_dtype())
        arr.setflags(write=False)
        self.data = arr

    @classmethod
    def wrap(cls, arr: np.ndarray) -> 'Tensor':
        "Takes ownership of ``arr`` without copying it."
        t = cls.__new__(cls)
        arr.setflags(write=False)
        t.data = arr
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        "Returns a writable copy of the data."
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ValueError('item() needs a single element, shape is {}'
                             .format(self.shape))
        return float(self.data.reshape(-1)[0])

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        return 'Tensor(shape={}, dtype={})'.format(self.shape, self.dtype)

    def __matmul__(self, other):
        from hydraens.numerics import ops
        return ops.matmul(self, other)

    def __add__(self, other):
        from hydraens.numerics import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from hydraens.numerics import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from hydraens.numerics import ops
        return ops.mul(self, other)

    def __neg__(self):
        from hydraens.numerics import ops
        return ops.scale(self, -1.0)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def zeros(shape, dtype=None) -> Tensor:
    return Tensor.wrap(np.zeros(shape, dtype=dtype or default_dtype()))


def ones(shape, dtype=None) -> Tensor:
    return Tensor.wrap(np.ones(shape, dtype=dtype or default_dtype()))
