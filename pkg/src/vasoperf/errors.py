"""Exception types shared across the package."""


class VasoperfError(Exception):
    """Base class for all package errors."""


class ConfigError(VasoperfError):
    """Invalid configuration or input data (CLI exit code 2)."""


class GeometryError(VasoperfError):
    """Geometric failure, e.g. a vessel element escaping the mesh."""


class NumericError(VasoperfError):
    """Numerical failure: singular system, non-convergence, undefined metric."""
