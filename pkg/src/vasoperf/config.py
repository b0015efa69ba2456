"""Experiment configuration: TOML loading, validation, defaults and hashing.

A config fully determines an experiment; together with the seed list it
pins every numeric output byte-for-byte (timing lives outside metric files).
"""

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field

from vasoperf.errors import ConfigError
from vasoperf.params import PhysicsParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALLOWED_KEEP_FRACTIONS = (0.05, 0.10, 0.15, 0.20)

# sections whose key sets vary with the chosen kind / import mode
_PERMISSIVE_SECTIONS = ("network", "mesh")

DEFAULTS = {
    "network": {
        "kind": "two_scale",
        "box": [420.0, 420.0, 420.0],
        "pitch": 60.0,
        "radius": 6.0,
        "backbone_every": 3,
        "backbone_radius": 32.0,
        "n_stubs": 170,
        "max_segment_length": 60.0,
    },
    "mesh": {
        "resolution": 10,
        "enlargement": 3.0,
        "grading": 1.5,
    },
    "physics": dataclasses.asdict(PhysicsParams()),  # literature defaults
    "bc": {
        "p_high": 5999.4,
        "p_low": 1999.8,
        "frac_assigned": 0.05,
        "frac_noflux": 0.33,
        "proximity_radius": 200.0,
        "p_target": 3100.0,
        "tau_target": 1.5,
        "w_p": 1.0,
        "w_tau": 1.0,
    },
    "partition": {
        "keep_fraction": 0.10,
        "min_component_length": 250.0,
    },
    "hybrid": {
        "penalty": "auto",
        "penalty_initial": 100.0,
        "kv_over_mu": 8.0,
        "sv_ratio": "geometric",
        "smearing_radius": 50.0,
    },
    "rev": {
        "l_rev": "auto",
        "n_centers": 10,
        "growth_window": "auto",  # 0.125 * max domain extent
        "stability_tol": 0.1,
        "max_growth_steps": 320,
    },
    "calibration": {
        "enabled": True,
        "mode": "scalar",  # scalar | vf-linear
        "kv_init": 5.0,
        "fix_sv": None,
        "alpha_init": 100.0,
        "max_iterations": 40,
        "weights": [0.25, 0.25, 0.25, 0.25],
    },
    "run": {
        "seeds": [0, 1, 2, 3, 4],
        "out": "runs/experiment",
    },
}


def _merge(defaults: dict, override: dict, permissive: bool = False) -> dict:
    out = {}
    for key, dval in defaults.items():
        if isinstance(dval, dict):
            out[key] = _merge(dval, override.get(key, {}),
                              permissive or key in _PERMISSIVE_SECTIONS)
        else:
            out[key] = override.get(key, dval)
    extra = set(override) - set(defaults)
    if extra and not permissive:
        raise ConfigError(f"unknown configuration keys: {sorted(extra)}")
    for key in extra:
        out[key] = override[key]
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment definition with a content hash."""

    data: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = _merge(DEFAULTS, self.data)
        self.validate()

    def validate(self):
        part = self.data["partition"]
        kf = part["keep_fraction"]
        if not any(abs(kf - v) < 1e-12 for v in ALLOWED_KEEP_FRACTIONS):
            raise ConfigError(
                f"keep_fraction {kf} not in the supported cases "
                f"{ALLOWED_KEEP_FRACTIONS}")
        seeds = self.data["run"]["seeds"]
        if not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("run.seeds must be a non-empty list of integers")
        cal = self.data["calibration"]
        if cal["mode"] not in ("scalar", "vf-linear"):
            raise ConfigError(f"unknown calibration mode {cal['mode']!r}")
        hyb = self.data["hybrid"]
        if hyb["penalty"] != "auto" and not float(hyb["penalty"]) > 0:
            raise ConfigError("hybrid.penalty must be 'auto' or positive")
        mesh = self.data["mesh"]
        if "import" not in mesh and not mesh["enlargement"] >= 1.0:
            raise ConfigError("mesh.enlargement must be >= 1")
        self.physics()  # raises on invalid physical parameters

    def physics(self) -> PhysicsParams:
        return PhysicsParams(**self.data["physics"])

    def __getitem__(self, key):
        return self.data[key]

    def hash(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def load_config(path: str) -> ExperimentConfig:
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    return ExperimentConfig(raw)
