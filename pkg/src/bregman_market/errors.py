"""Exception types shared across the package."""


class MarketInputError(ValueError):
    """Malformed input: dimension mismatch, bad indices, invalid construction."""


class DomainError(ValueError):
    """A query point lies outside the domain the operation requires."""


class NumericalError(RuntimeError):
    """An iterative solve failed; carries the final residual.

    `diverged` is True when the iterates escaped toward infinity, which
    signals an infimum that is not attained rather than a solver defect.
    """

    def __init__(self, message: str, residual: float | None = None, diverged: bool = False):
        super().__init__(message)
        self.residual = residual
        self.diverged = diverged


class OracleError(RuntimeError):
    """The brute-force oracle could not produce a usable answer."""


class PathUnsupportedError(RuntimeError):
    """The traced path cannot certify optimal trades; use the generic solver."""
