"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with each other or with a network spec."""


class NumericError(ArithmeticError):
    """Non-finite values or a failed numerical routine."""


class PreconditionError(ValueError):
    """An input violates the domain of the operation (e.g. a loss above the nadir)."""


class NadirError(PreconditionError):
    """Loss ``index`` is not strictly below the nadir ``eta``.

    Raised instead of clamping so that a stale nadir is visible to the caller.
    """

    def __init__(self, index: int, loss: float, eta: float):
        self.index = index
        self.loss = loss
        self.eta = eta
        super().__init__(
            f"loss {index} = {loss!r} is not below nadir eta = {eta!r}; refresh the nadir first"
        )
