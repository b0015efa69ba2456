"""In-vivo blood viscosity closure for cylindrical vessel segments.

Empirical diameter- and hematocrit-dependent law; the relative viscosity is
multiplied by a fixed plasma viscosity to obtain an absolute value.
"""

import numpy as np

PLASMA_VISCOSITY = 1.0e-3  # Pa*s, documented choice
MIN_DIAMETER = 1.1  # um, law singular at and below this diameter


def relative_viscosity_45(diameter):
    """Relative apparent viscosity at hematocrit 0.45 for diameter in um."""
    d = np.asarray(diameter, dtype=float)
    return 6.0 * np.exp(-0.085 * d) + 3.2 - 2.44 * np.exp(-0.06 * d**0.645)


def _shape_exponent(d):
    # controls the hematocrit dependence; the 1/(1+1e-11 d^12) term switches
    # behaviour between capillary and large-vessel regimes
    gate = 1.0 / (1.0 + 1.0e-11 * d**12)
    return (0.8 + np.exp(-0.075 * d)) * (-1.0 + gate) + gate


def viscosity_in_vivo(diameter, hematocrit=0.45, plasma_viscosity=PLASMA_VISCOSITY):
    """Absolute in-vivo blood viscosity in Pa*s.

    diameter is in um and must exceed 1.1 um; hematocrit must lie in (0, 1).
    Accepts scalars or arrays.
    """
    d = np.asarray(diameter, dtype=float)
    if np.any(d <= MIN_DIAMETER):
        raise ValueError(f"diameter must exceed {MIN_DIAMETER} um, got {diameter}")
    if not 0.0 < hematocrit < 1.0:
        raise ValueError(f"hematocrit must lie in (0, 1), got {hematocrit}")

    xi = d / (d - MIN_DIAMETER)
    xi2 = xi * xi
    mu45 = relative_viscosity_45(d)
    c = _shape_exponent(d)
    frac = ((1.0 - hematocrit) ** c - 1.0) / ((1.0 - 0.45) ** c - 1.0)
    mu_rel = (1.0 + (mu45 - 1.0) * frac * xi2) * xi2
    result = plasma_viscosity * mu_rel
    if np.ndim(diameter) == 0:
        return float(result)
    return result
