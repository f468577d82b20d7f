"""Exception hierarchy shared by all modules."""


class PaveCNNError(Exception):
    pass


class ShapeError(PaveCNNError, ValueError):
    """Tensor shapes are incompatible with an operation or layer."""


class FormatError(PaveCNNError, ValueError):
    """A file does not follow the expected binary/text layout."""


class ValidationError(PaveCNNError, ValueError):
    """User-supplied data (manifest rows, labels) failed validation."""


class StateError(PaveCNNError, RuntimeError):
    pass


class NumericError(PaveCNNError, ArithmeticError):
    pass
