"""Vascular perfusion models: fully-resolved 1D-3D flow, a hybrid
embedded/homogenized variant with mortar-penalty coupling, and the REV,
metric and calibration machinery to compare and fit the two.

Units throughout: lengths in micrometers, pressures in Pa, times in seconds.
Derived units follow (flows in um^3/s, conductances in um^3/(Pa*s), ...).
"""

from vasoperf.errors import ConfigError, GeometryError, NumericError, VasoperfError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "GeometryError",
    "NumericError",
    "VasoperfError",
    "__version__",
]
