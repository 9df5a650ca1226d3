from .tape import GradTape, backward, current_tape, numerical_gradient  # NOQA
from .tensor import (Tensor, as_tensor, default_dtype, get_precision,  # NOQA
                     ones, precision, set_precision, zeros)
from . import ops  # NOQA
