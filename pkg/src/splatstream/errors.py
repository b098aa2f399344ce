"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: usage errors -> 1, data errors -> 2,
numerical failures -> 3.
"""


class SplatstreamError(Exception):
    """Base class for all package errors."""


class DataError(SplatstreamError):
    """Malformed or missing input data (manifests, images, streams)."""


class FormatError(DataError):
    """Binary container violation: bad magic, version, checksum, truncation."""


class NumericalError(SplatstreamError):
    """Numerical failure (NaN/Inf detected, degenerate matrices)."""


def check_finite(name: str, arr) -> None:
    """Raise NumericalError naming `name` if `arr` contains NaN or Inf."""
    import numpy as np

    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values detected in '{name}'")
