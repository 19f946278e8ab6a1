"""Exception types shared across the package."""


class ChiralwaveError(Exception):
    """Base class for all chiralwave errors."""


class GeometryError(ChiralwaveError):
    """Invalid waveguide geometry (e.g. overlapping holes)."""


class ResolutionError(ChiralwaveError):
    """Grid spacing violates the mesh rule dx <= 0.4*a/n."""


class SolverError(ChiralwaveError):
    """Eigensolver failure; message carries the residual report."""


class DegenerateFluxError(SolverError):
    """Poynting flux too small relative to the stored energy (standing wave)."""


class PolarizationError(ChiralwaveError):
    """Polarization state undefined (zero field vector)."""


class MaskError(ChiralwaveError):
    """Averaging mask is empty or inconsistent with the grid."""


class FieldFileError(ChiralwaveError):
    """Malformed field grid file.

    Carries the 1-based line number of the first offending line when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ChiralwaveError):
    """Invalid or unknown run-configuration key/value."""
