from typing import Optional


class CbivError(Exception):
    """Raises if anything in the estimation pipeline fails."""
    pass


class ConfigurationError(CbivError, ValueError):
    """Raises if a spec, config or input shape is invalid."""
    pass


class NumericalFailureError(CbivError):
    """Raises if an activation, loss or gradient becomes non-finite."""

    def __init__(self,
                 message: str,
                 layer: Optional[int] = None,
                 epoch: Optional[int] = None):
        if layer is not None:
            message = f"{message} (layer {layer})"
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch


class StateError(CbivError):
    """Raises if a model is used out of order (backward before forward,
    prediction before training)."""
    pass


class DegenerateArmError(CbivError):
    """Raises if one treatment arm carries no weight in a balancing batch."""
    pass


class UnavailableOracleError(CbivError):
    """Raises if ground truth is requested from a dataset without oracle
    columns."""
    pass


class ParseError(CbivError):
    """Raises if a dataset file is malformed."""

    def __init__(self,
                 message: str,
                 line: Optional[int] = None,
                 column: Optional[str] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class PreconditionViolationError(CbivError):
    """Raises if the coarsened covariate is not independent of the estimated
    treatment in a toy model."""
    pass


class DomainError(CbivError, ValueError):
    """Raises if a scale parameter is not strictly positive."""
    pass
