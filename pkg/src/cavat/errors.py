"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition (shape, range, parity)."""


class InvalidSeedError(ValueError):
    """Flood-fill seed is out of bounds or on a background pixel."""


class InvalidDistributionError(ValueError):
    """A probability map is malformed (rows do not sum to 1, values outside [0,1])."""


class NumericalFailureError(RuntimeError):
    """A non-finite value appeared where finite math was required.

    Carries the name of the offending tensor when known.
    """

    def __init__(self, message, tensor_name=None):
        super().__init__(message)
        self.tensor_name = tensor_name


class UndefinedMetricError(ValueError):
    """The metric is undefined on this input (e.g. Hausdorff of an empty mask)."""


class DatasetParseError(ValueError):
    """A dataset file is malformed; carries file and line context."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class GenerationFailureError(RuntimeError):
    """Synthetic data generation could not satisfy its constraints after bounded retries."""


class ConfigurationError(ValueError):
    """An experiment configuration is inconsistent or references an unknown option."""
