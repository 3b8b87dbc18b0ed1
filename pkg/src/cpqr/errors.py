"""Exception hierarchy shared across the toolkit."""


class CpqrError(Exception):
    """Base class for all toolkit errors."""


class DataError(CpqrError):
    """Problems with input data files or series construction."""


class SchemaError(DataError):
    """A required column is missing or misnamed."""


class FrequencyError(DataError):
    """Date index is not a gap-free quarterly sequence."""


class ParseError(DataError):
    """A cell could not be parsed; message carries the row number."""


class InsufficientDataError(DataError):
    """Not enough usable observations for the requested operation."""


class SolverError(CpqrError):
    """The LP backend failed to return an optimal solution."""


class DegeneracyError(SolverError):
    """Weighted design matrix is rank deficient; message lists columns."""


class EstimationError(CpqrError):
    """An estimator fit failed; message identifies the grid point."""


class SelectionError(CpqrError):
    """Bandwidth selection had no finite candidate loss."""


class InferenceError(CpqrError):
    """Bootstrap or Hausman computation could not be completed."""


class EvaluationError(CpqrError):
    """A score or calibration measure is undefined for the inputs."""
