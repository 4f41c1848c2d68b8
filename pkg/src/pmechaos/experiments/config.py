"""Study configuration: TOML files, schema validation and materialized defaults.

A configuration names a study and overrides any of that study's defaults.
After loading, every parameter is explicit, so the stored ``config.toml`` of
a run reproduces it without consulting this module's defaults.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields

import jsonschema
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from ..errors import ConfigurationError
from ..kernels import CoulombSpec, MollifierSpec, ScalingLaw

__all__ = [
    "EXPECTATION_STUDIES",
    "STUDIES",
    "ExperimentConfig",
    "default_config",
    "load_config",
]

STUDIES = ("kernel_verify", "pde_eta_sweep", "chaos_n_sweep", "coulomb_deviation", "lln_study")
EXPECTATION_STUDIES = ("chaos_n_sweep", "coulomb_deviation", "lln_study")

_COMMON = {
    "master_seed": 0,
    "output_dir": "runs",
    "dim": 1,
    "beta": 0.15,
    "regime": "pme",
    "n_list": [],
    "eta_list": [],
    "replicas": 2,
    "t_end": 1.0,
    "dt": 1e-3,
    "observe_every": 0.05,
    "box_length": 12.8,
    "points_per_axis": 1024,
    "initial_std": 1.0,
    "base_std": 1.0,
    "kappa": -1,
    "alpha": 0.3,
    "probes": 200,
    "force_method": "mesh",
    "sensitivity_t": [],
    "bands": {},
}

# Acceptance-scale defaults per study.
_DEFAULTS = {
    "kernel_verify": {
        "eta_list": [0.4, 0.2, 0.1, 0.05],
        "initial_std": 2.0,
        "box_length": 25.6,
        "points_per_axis": 2048,
        "bands": {"moll_slope_lo": 1.8, "moll_slope_hi": 2.2, "mass_tol": 1e-8, "moment_tol": 1e-6, "selfconv_tol": 1e-6},
    },
    "pde_eta_sweep": {
        "eta_list": [0.4, 0.2, 0.1, 0.05],
        "sensitivity_t": [0.5, 2.0],
        "bands": {"l1_slope_lo": 1.6, "l1_slope_hi": 2.4, "entropy_slope_lo": 3.2, "entropy_slope_hi": 4.8},
    },
    "chaos_n_sweep": {
        "n_list": [500, 1000, 2000, 4000, 8000, 16000],
        "replicas": 20,
        "t_end": 0.5,
        "dt": 5e-4,
        "box_length": 40.0,
        "bands": {"l2_slope_max": -0.35},
    },
    "coulomb_deviation": {
        "dim": 2,
        "beta": 0.2,
        "regime": "coulomb",
        "n_list": [1000, 2000, 4000, 8000],
        "replicas": 50,
        "t_end": 0.5,
        "dt": 0.01,
        "observe_every": 0.1,
        "box_length": 25.6,
        "points_per_axis": 256,
        "initial_std": 1.0,
        "bands": {"exceed_prob_max": 0.2},
    },
    "lln_study": {
        "dim": 2,
        "beta": 0.2,
        "regime": "coulomb",
        "kappa": 1,
        "n_list": [1000, 2000, 4000, 8000, 16000, 32000],
        "replicas": 100,
        "t_end": 0.0,
        "box_length": 12.8,
        "points_per_axis": 256,
        "bands": {"slope_lo": -1.15, "slope_hi": -0.85},
    },
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["study"],
    "properties": {
        "study": {"enum": list(STUDIES)},
        "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_dir": {"type": "string"},
        "dim": {"type": "integer", "minimum": 1, "maximum": 3},
        "beta": _POS,
        "regime": {"enum": ["pme", "coulomb"]},
        "n_list": {"type": "array", "items": {"type": "integer", "minimum": 2}},
        "eta_list": {"type": "array", "items": _POS},
        "replicas": {"type": "integer", "minimum": 1},
        "t_end": {"type": "number", "minimum": 0},
        "dt": _POS,
        "observe_every": _POS,
        "box_length": _POS,
        "points_per_axis": {"type": "integer", "minimum": 2},
        "initial_std": _POS,
        "base_std": _POS,
        "kappa": {"enum": [-1, 1]},
        "alpha": _POS,
        "probes": {"type": "integer", "minimum": 1},
        "force_method": {"enum": ["mesh", "direct"]},
        "sensitivity_t": {"type": "array", "items": _POS},
        "bands": {"type": "object", "additionalProperties": _NUM},
    },
}


def _steps(span, dt):
    k = round(span / dt)
    return k if abs(k * dt - span) <= 1e-9 * max(1.0, span) else None


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully materialized parameters of one study.

    Lists are stored as tuples; ``bands`` holds the acceptance thresholds
    the study's checks are evaluated against.
    """

    study: str
    master_seed: int
    output_dir: str
    dim: int
    beta: float
    regime: str
    n_list: tuple
    eta_list: tuple
    replicas: int
    t_end: float
    dt: float
    observe_every: float
    box_length: float
    points_per_axis: int
    initial_std: float
    base_std: float
    kappa: int
    alpha: float
    probes: int
    force_method: str
    sensitivity_t: tuple
    bands: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    # -- derived ---------------------------------------------------------

    @property
    def scaling(self):
        return ScalingLaw(self.beta, self.dim, self.regime)

    @property
    def spacing(self):
        return self.box_length / self.points_per_axis

    def eta(self, n):
        return self.scaling.eta(n)

    def kernel(self, n=None, eta=None):
        eta = self.eta(n) if eta is None else eta
        if self.regime == "coulomb":
            return CoulombSpec(self.dim, self.kappa, eta)
        return MollifierSpec(self.dim, eta, base_std=self.base_std)

    def observation_times(self):
        k = _steps(self.t_end, self.observe_every) if self.t_end > 0 else 0
        return tuple(round(i * self.observe_every, 12) for i in range(k + 1))

    def band(self, name):
        if name not in self.bands:
            raise ConfigurationError(f"missing acceptance band {name!r}")
        return float(self.bands[name])

    # -- validation ------------------------------------------------------

    def validate(self):
        p = self.points_per_axis
        if p & (p - 1):
            raise ConfigurationError(f"points_per_axis must be a power of two, got {p}")
        if self.study in EXPECTATION_STUDIES:
            if self.replicas < 2:
                raise ConfigurationError(f"{self.study} reports expectations and needs replicas >= 2")
            if not self.n_list:
                raise ConfigurationError(f"{self.study} needs a non-empty n_list")
        if self.study in ("kernel_verify", "pde_eta_sweep") and not self.eta_list:
            raise ConfigurationError(f"{self.study} needs a non-empty eta_list")
        law = self.scaling
        h = self.spacing
        if self.study in ("chaos_n_sweep", "coulomb_deviation"):
            if self.t_end <= 0 or _steps(self.t_end, self.dt) is None:
                raise ConfigurationError(f"t_end={self.t_end} is not a positive multiple of dt={self.dt}")
            if _steps(self.observe_every, self.dt) is None or _steps(self.t_end, self.observe_every) is None:
                raise ConfigurationError("observe_every must be a multiple of dt dividing t_end")
        if self.study in ("pde_eta_sweep",):
            for t in (self.t_end, *self.sensitivity_t):
                if _steps(t, self.observe_every) is None:
                    raise ConfigurationError(f"horizon {t} is not a multiple of observe_every")
        for n in self.n_list:
            eta = law.eta(n)
            if eta > self.box_length / 8:
                raise ConfigurationError(f"N={n}: eta={eta:.4g} exceeds L/8")
            if h > eta / 4 * (1 + 1e-9):
                raise ConfigurationError(f"N={n}: grid spacing {h:.4g} does not resolve eta={eta:.4g} (need h <= eta/4)")
            if self.regime == "pme" and self.study == "chaos_n_sweep" and self.dt > eta**2 / 4:
                raise ConfigurationError(f"N={n}: dt={self.dt} exceeds eta^2/4={eta**2 / 4:.4g}")
        for eta in self.eta_list:
            if h > eta / 4 * (1 + 1e-9):
                raise ConfigurationError(f"grid spacing {h:.4g} does not resolve eta={eta:.4g} (need h <= eta/4)")

    # -- serialization ---------------------------------------------------

    def to_dict(self):
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        out["bands"] = dict(sorted(self.bands.items()))
        return out

    def to_toml(self):
        return tomli_w.dumps(self.to_dict())

    def config_hash(self):
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return load_config(d)


def default_config(study, **overrides):
    """Acceptance-scale configuration for ``study`` with optional overrides."""
    return load_config({"study": study, **overrides})


def _read(source):
    if isinstance(source, dict):
        return copy.deepcopy(source)
    try:
        with open(source, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{source}: invalid TOML: {exc}") from exc


def load_config(source, **overrides):
    """Read a TOML path (or a dict), apply overrides, validate and materialize defaults."""
    raw = _read(source)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        jsonschema.validate(raw, _SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"invalid configuration at {where}: {exc.message}") from exc
    study = raw["study"]
    merged = copy.deepcopy(_COMMON)
    defaults = copy.deepcopy(_DEFAULTS[study])
    bands = defaults.pop("bands", {})
    merged.update(defaults)
    bands.update(raw.pop("bands", {}))
    merged.update(raw)
    if study == "chaos_n_sweep" and "l1_slope_max" not in bands:
        bands["l1_slope_max"] = -min(0.2, 2 * merged["beta"] / merged["dim"] * 0.8)
    merged["bands"] = {k: float(v) for k, v in bands.items()}
    kw = {}
    for f in fields(ExperimentConfig):
        v = merged[f.name]
        kw[f.name] = tuple(v) if isinstance(v, list) else v
    kw["beta"] = float(kw["beta"])
    return ExperimentConfig(**kw)
