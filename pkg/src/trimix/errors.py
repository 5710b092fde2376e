"""Exception hierarchy shared by the whole package.

Every error carries an ``exit_code`` so the CLI can map failures onto its
contract: 1 for contract/format violations, 2 for numeric failures.
"""


class TriMixError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DimensionError(TriMixError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(TriMixError):
    """A documented precondition was violated by the caller."""


class DetachedValueError(ContractError):
    """A tape operation was requested on a value not recorded on any tape."""


class BatchParityError(ContractError):
    """The batch size is odd; flip-based pairing requires an even batch."""


class DegenerateFeatureError(TriMixError):
    """A slice that must be standardized has (near-)zero variance."""


class FormatError(TriMixError):
    """An on-disk artifact (IDX file, CSV, checkpoint) is malformed."""


class ArchMismatchError(TriMixError):
    """A checkpoint's architecture does not fit the requested use."""


class NumericError(TriMixError):
    """A computation produced NaN/Inf or otherwise failed numerically."""

    exit_code = 2
