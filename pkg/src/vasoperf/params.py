"""Physical parameters of the perfusion models with literature defaults.

Units: um, Pa, s (densities in kg/m^3; only their ratio enters the
equations, so the absolute unit cancels).
"""

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from vasoperf.errors import ConfigError


@dataclass
class PhysicsParams:
    """Parameters shared by the fully-resolved and hybrid models."""

    rho_blood: float = 1060.0       # kg/m^3, blood (1D and homogenized)
    rho_if: float = 1000.0          # kg/m^3, interstitial fluid / plasma
    k_if_over_mu: float = 1.2782e-1  # um^2/(Pa*s), IF hydraulic conductivity
    lp_vessel: float = 2.1e-5       # um/(Pa*s), transvascular conductivity (1D walls)
    lp_homogenized: float = 2.1e-5  # um/(Pa*s), homogenized vessel walls
    sigma: float = 0.82             # oncotic reflection coefficient
    pi_blood: float = 2666.4        # Pa
    pi_if: float = 1999.8           # Pa
    hematocrit: float = 0.45

    def __post_init__(self):
        for name in ("rho_blood", "rho_if", "k_if_over_mu"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lp_vessel < 0 or self.lp_homogenized < 0:
            raise ConfigError("hydraulic conductivities must be non-negative")
        if not 0.0 <= self.sigma <= 1.0:
            raise ConfigError(f"sigma must lie in [0, 1], got {self.sigma}")
        if not 0.0 < self.hematocrit < 1.0:
            raise ConfigError("hematocrit must lie in (0, 1)")

    @property
    def oncotic_jump(self) -> float:
        """sigma * (pi_blood - pi_if), the Starling equilibrium pressure, Pa."""
        return self.sigma * (self.pi_blood - self.pi_if)

    def replace(self, **kw) -> "PhysicsParams":
        return replace(self, **kw)


@dataclass
class HybridParams:
    """Extra parameters of the hybrid model.

    kv_over_mu may be a scalar (isotropic, domain-constant) or an array of
    per-element values over the mesh (used by the volume-fraction-dependent
    permeability law).
    """

    kv_over_mu: Union[float, np.ndarray] = 5.0  # um^2/(Pa*s)
    sv_ratio: float = 5.0e-3                    # 1/um, homogenized wall area density
    penalty: float = 100.0                      # um^2/(Pa*s)
    smearing_radius: float = 200.0              # um, boundary-condition transfer

    def __post_init__(self):
        kv = np.asarray(self.kv_over_mu, dtype=float)
        if np.any(kv <= 0):
            raise ConfigError("kv_over_mu must be positive")
        if not self.sv_ratio >= 0:
            raise ConfigError("sv_ratio must be non-negative")
        if not self.penalty > 0:
            raise ConfigError("penalty must be positive")
        if not self.smearing_radius >= 0:
            raise ConfigError("smearing_radius must be non-negative")

    def replace(self, **kw) -> "HybridParams":
        return replace(self, **kw)
