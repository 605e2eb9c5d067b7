"""Exception types shared across the package."""


class HltmcError(Exception):
    """Base class for package-specific errors."""


class DataError(HltmcError):
    """Malformed or inconsistent input data (files, corpora, structures)."""


class DegeneracyError(HltmcError):
    """A numerical quantity degenerated below representable range.

    Raised e.g. when the truncation mass of a truncated normal underflows
    because the mean sits far outside [0, 1] relative to the scale.
    """
