import itertools
import logging
from typing import Iterable, List, Optional, Tuple

import numpy as np

from hydraens.errors import ConfigError, ContractError, NumericalError
from hydraens.numerics import GradTape, Tensor, backward, ops
from hydraens.transformer.layers import forward_model
from hydraens.transformer.model import HeadMask, Model

logger = logging.getLogger(__name__)
logger.addHandler(logging.StreamHandler())

Batch = Tuple[np.ndarray, np.ndarray]


def loss_and_grads(model: Model, tokens, labels,
                   mask: Optional[HeadMask] = None, input_noise=None):
    '''Mean cross-entropy of a batch and its gradient per parameter name'''
    params = model.parameters()
    with GradTape() as tape:
        tape.watch(*params.values())
        logits = forward_model(tokens, model, mask, input_noise=input_noise)
        loss = ops.cross_entropy(logits, labels)
    grads = backward(loss, tape)
    return loss.item(), {name: grads[t] for name, t in params.items()}


def train_steps(model: Model, batches: Iterable[Batch], lr: float,
                steps: int, momentum: float = 0.0,
                log_every: int = 50, losses: Optional[List[float]] = None
                ) -> Model:
    '''Runs ``steps`` steps of cross-entropy SGD

    Batches are cycled when there are fewer than ``steps``. The input
    model is left untouched; the updated one is returned.

    Arguments:
        model: Model to start from. Structurally pruned models train
            only the heads they carry.
        batches: ``(tokens, labels)`` pairs.
        lr (float): Learning rate, ``>= 0``. ``0`` returns the model
            unchanged.
        steps (int): Number of updates, ``>= 0``.
        momentum (float): Heavy-ball momentum; ``0`` is plain SGD.
        log_every (int): Loss is logged at INFO every this many steps.
        losses (list): If given, the loss of each step is appended.

    '''
    if lr < 0:
        raise ConfigError('lr has to be >= 0: {}'.format(lr))
    if steps < 0:
        raise ConfigError('steps has to be >= 0: {}'.format(steps))
    if not 0.0 <= momentum < 1.0:
        raise ConfigError('momentum has to be in [0, 1): {}'
                          .format(momentum))
    if steps == 0 or lr == 0:
        return model

    batches = list(batches)
    if not batches:
        raise ContractError('train_steps needs at least one batch')

    params = {name: t.data for name, t in model.parameters().items()}
    velocity = {name: np.zeros_like(a) for name, a in params.items()}
    current = model
    for step, (tokens, labels) in zip(range(steps),
                                      itertools.cycle(batches)):
        try:
            loss, grads = loss_and_grads(current, tokens, labels)
        except NumericalError as e:
            raise NumericalError(
                'training diverged at step {} (lr={}, momentum={}): {}'
                .format(step, lr, momentum, e)) from e
        if losses is not None:
            losses.append(loss)
        if log_every and step % log_every == 0:
            logger.info('step %d loss %.6f', step, loss)

        updated = {}
        for name, a in params.items():
            v = momentum * velocity[name] + grads[name].data
            velocity[name] = v
            updated[name] = a - lr * v
        if not all(np.all(np.isfinite(a)) for a in updated.values()):
            raise NumericalError(
                'non-finite parameters after step {} (lr={}, loss={})'
                .format(step, lr, loss))
        params = updated
        current = current.with_parameters(
            {name: Tensor.wrap(a) for name, a in params.items()})
    return current
