"""Exception types shared across the package."""


class SearchFitError(Exception):
    """Base class for all package errors."""


class ShapeError(SearchFitError):
    """Tensor dimensions do not line up for the requested operation."""


class ContractError(SearchFitError):
    """A caller violated an operation's contract (e.g. backward on a non-scalar)."""


class ValidationError(SearchFitError):
    """Input data is malformed or out of the documented domain."""


class ConfigError(SearchFitError):
    """A configuration value is outside its legal range."""


class UnknownIdError(SearchFitError):
    """An entity ID is not present in the relevant table."""


class ParseError(SearchFitError):
    """A record file could not be parsed; message names the offending line."""


class EvaluationError(SearchFitError):
    """A metric is undefined for the given inputs (e.g. no valid users)."""


class TrainingDiverged(SearchFitError):
    """Loss became non-finite; carries a dump of the offending batch."""

    def __init__(self, message: str, batch_dump: list | None = None):
        super().__init__(message)
        self.batch_dump = batch_dump or []
