class HydraError(Exception):
    '''Base class of every error raised by hydraens

    Concrete errors also derive from the builtin exception that best
    describes them, so ``except ValueError`` keeps working for callers
    that do not know about this package.

    '''
    pass


class ConfigError(HydraError, ValueError):
    '''Hyperparameters or budgets that violate their invariants'''
    pass


class DimensionError(HydraError, ValueError):
    '''Operand shapes that do not conform'''
    pass


class ContractError(HydraError, ValueError):
    '''A precondition of an operation does not hold

    Examples are a non-scalar loss passed to ``backward``, an all-false
    head mask row, or an empty calibration set.

    '''
    pass


class NumericalError(HydraError, ArithmeticError):
    '''Non-finite values appeared where finite values are required'''
    pass


class ContainerError(HydraError, ValueError):
    '''A model container on disk is malformed'''
    pass


class BadMagicError(ContainerError):
    pass


class ManifestError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class OffsetOverlapError(ContainerError):
    pass


class ShapeMismatchError(ContainerError):
    pass
