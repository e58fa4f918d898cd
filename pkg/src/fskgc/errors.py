"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/contract problems exit 1, data
problems exit 2, numeric problems exit 3.
"""


class FskgcError(Exception):
    """Base class for all package errors."""


class ContractError(FskgcError, ValueError):
    """An operation was called in violation of its documented contract."""


class ShapeError(ContractError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericError(FskgcError, ArithmeticError):
    """A non-finite value was produced or consumed in checked mode."""


class DataError(FskgcError):
    """Base class for dataset problems."""


class IngestError(DataError):
    """A required dataset file is missing or unreadable."""


class FormatError(DataError):
    """A dataset file exists but its contents are malformed."""


class ValidationError(DataError):
    """Dataset contents violate a cross-file invariant (e.g. split overlap)."""


class EpisodeError(DataError):
    """An episode cannot be sampled from the available triples."""


class SpecError(DataError):
    """A synthetic-generator specification is internally inconsistent."""


class EvaluationError(DataError):
    """A ranking query cannot be evaluated (e.g. true tail not a candidate)."""
