"""Exception types shared across the library."""

from __future__ import annotations


class GldoaError(Exception):
    """Base class for library-specific failures."""


class ConfigError(GldoaError):
    """Invalid or inconsistent run configuration."""


class SolverError(GldoaError):
    """Iterative solver failed to converge.

    Carries the last iterate and the residuals at termination so callers can
    inspect or log partial progress.
    """

    def __init__(self, message, last_iterate=None, residuals=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residuals = residuals


class RootExtractionError(GldoaError):
    """Fewer admissible roots than requested components.

    Carries the roots that were found.
    """

    def __init__(self, message, roots=None):
        super().__init__(message)
        self.roots = roots


class PeakCountError(GldoaError):
    """Grid search found fewer spectral peaks than requested sources.

    Carries the peak locations (degrees) that were found.
    """

    def __init__(self, message, peaks=None):
        super().__init__(message)
        self.peaks = peaks
