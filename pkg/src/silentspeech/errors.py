"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage errors -> 1, DataError -> 2,
NumericalError -> 3.
"""


class SilentSpeechError(Exception):
    """Base class for all toolkit errors."""


class DataError(SilentSpeechError):
    """Malformed, missing, or inconsistent input data."""


class ManifestError(DataError):
    """Manifest file cannot be parsed or violates its invariants."""


class NumericalError(SilentSpeechError):
    """Numerical failure: divergence, singular system, degenerate input."""
