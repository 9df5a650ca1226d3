import threading
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from hydraens.errors import ContractError
from hydraens.numerics.tensor import Tensor

_local = threading.local()


def current_tape():
    stack = getattr(_local, 'stack', None)
    if not stack:
        return None
    return stack[-1]


class GradTape:
    '''Records differentiable operations for reverse-mode gradients

    Parameters have to be registered with :meth:`watch` before they are
    used. Every operation evaluated while the tape is active and that
    reads a watched tensor, directly or through earlier recorded
    results, is appended to the tape. Nodes are recorded in evaluation
    order, which is already a topological order of the graph.

    Example::

        with GradTape() as tape:
            tape.watch(w)
            loss = ops.sum_all(ops.matmul(x, w))
        grads = backward(loss, tape)

    A tape is single-writer: it must not be shared across threads.

    '''

    def __init__(self):
        self._nodes: List[Tuple[Tensor, Tuple[Tensor, ...], Callable]] = []
        self._tracked = set()
        self._watched: List[Tensor] = []

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if not isinstance(t, Tensor):
                raise TypeError('only Tensor can be watched: {}'
                                .format(type(t)))
            if id(t) not in self._tracked:
                self._tracked.add(id(t))
                self._watched.append(t)

    @property
    def watched(self) -> Sequence[Tensor]:
        return tuple(self._watched)

    def is_tracked(self, t: Tensor) -> bool:
        return id(t) in self._tracked

    def record(self, out: Tensor, parents: Sequence[Tensor],
               vjp: Callable) -> None:
        if not any(id(p) in self._tracked for p in parents):
            return
        self._nodes.append((out, tuple(parents), vjp))
        self._tracked.add(id(out))

    def __len__(self):
        return len(self._nodes)

    def __enter__(self) -> 'GradTape':
        stack = getattr(_local, 'stack', None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()


def backward(loss: Tensor, tape: GradTape) -> Dict[Tensor, Tensor]:
    '''Returns the gradient of a scalar ``loss`` for every watched tensor

    Each recorded node is visited exactly once, in reverse recording
    order. Watched tensors that ``loss`` does not depend on get a zero
    gradient.

    '''
    if loss.size != 1:
        raise ContractError('loss has to be a scalar, shape is {}'
                            .format(loss.shape))

    adjoints = {id(loss): np.ones_like(loss.data)}
    for out, parents, vjp in reversed(tape._nodes):
        g = adjoints.pop(id(out), None)
        if g is None:
            continue
        for p, gp in zip(parents, vjp(g)):
            if gp is None or not tape.is_tracked(p):
                continue
            assert gp.shape == p.shape, (gp.shape, p.shape)
            if id(p) in adjoints:
                adjoints[id(p)] = adjoints[id(p)] + gp
            else:
                adjoints[id(p)] = gp

    grads = {}
    for w in tape.watched:
        g = adjoints.get(id(w))
        if g is None:
            g = np.zeros_like(w.data)
        grads[w] = Tensor.wrap(np.array(g, dtype=w.dtype))
    return grads


def numerical_gradient(f: Callable[[], float], arr: np.ndarray,
                       eps: float = 1e-5) -> np.ndarray:
    '''Central finite differences of ``f`` with respect to ``arr``

    ``arr`` is perturbed in place, one entry at a time, and restored
    after each evaluation; ``f`` has to read it on every call.

    '''
    grad = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=['multi_index'])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + eps
        fp = f()
        arr[idx] = orig - eps
        fm = f()
        arr[idx] = orig
        grad[idx] = (fp - fm) / (2 * eps)
    return grad
