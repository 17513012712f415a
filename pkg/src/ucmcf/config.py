"""Run configuration: validation, canonical hashing, experiment presets."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

FLOW_KINDS = ("original", "normalized", "regularized", "classical")


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


@dataclass
class RunConfig:
    flow_kind: str
    init: str
    n: int = 256
    dim: int = 2
    dt: float = 1e-3
    t_end: float = 1.0
    t_end_frac: Optional[float] = None  # t_end = frac * M(0) for original flow
    reparam_every: int = 1
    epsilon: Optional[float] = None
    drift_ceiling: float = 1e-3
    output_dir: Optional[str] = None
    format: str = "csv"
    snapshot_every: int = 0
    record_every: int = 1
    seed: int = 0
    order: Optional[int] = None
    conv_tol: float = 0.0
    length_floor: float = 1e-3

    def validate(self):
        if self.flow_kind not in FLOW_KINDS:
            raise ConfigError(f"unknown flow kind {self.flow_kind!r}")
        if self.n < 8:
            raise ConfigError("n must be at least 8")
        if self.dim < 2:
            raise ConfigError("dim must be at least 2")
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        if self.t_end <= 0.0 and self.t_end_frac is None:
            raise ConfigError("t_end must be positive")
        if self.flow_kind == "regularized":
            if self.epsilon is None or self.epsilon <= 0.0:
                raise ConfigError("regularized flow requires epsilon > 0")
        elif self.epsilon is not None:
            raise ConfigError("epsilon only applies to the regularized flow")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if self.order is not None and self.order not in (1, 2):
            raise ConfigError("order must be 1 or 2")
        return self

    def canonical_json(self):
        data = {k: v for k, v in asdict(self).items()}
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def config_from_mapping(mapping, flow_kind=None):
    """Build a RunConfig from a dict, rejecting unknown keys."""
    data = dict(mapping)
    unknown = set(data) - _FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if flow_kind is not None:
        data.setdefault("flow_kind", flow_kind)
        if data["flow_kind"] != flow_kind:
            raise ConfigError(
                f"config file flow_kind {data['flow_kind']!r} conflicts with "
                f"command {flow_kind!r}")
    if "flow_kind" not in data or "init" not in data:
        raise ConfigError("flow_kind and init are required")
    return RunConfig(**data).validate()


def load_config_file(path):
    """Parse a TOML or JSON config file into a plain mapping."""
    if path.endswith(".json"):
        with open(path) as fh:
            return json.load(fh)
    import tomli

    with open(path, "rb") as fh:
        return tomli.load(fh)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

@dataclass
class Preset:
    name: str
    description: str
    configs: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    special: Optional[str] = None  # handled by a dedicated runner in the CLI


def _presets():
    presets = {}

    presets["shrinking-circle"] = Preset(
        name="shrinking-circle",
        description="radius-1 circle under the original flow: constant mass "
                    "slope -1 and tight extinction brackets",
        configs=[RunConfig(flow_kind="original", init="circle:1", n=256,
                           dt=1e-4, t_end=0.4).validate()],
        checks=["mass_slope", "lambda_nonincreasing",
                "extinction_lower", "extinction_upper", "lambda_floor"],
    )

    presets["ellipse-extinction"] = Preset(
        name="ellipse-extinction",
        description="unit-length 2:1 ellipse run to 80% of its extinction "
                    "time: length brackets and nonincreasing decay rate",
        configs=[RunConfig(flow_kind="original", init="ellipse:2,1", n=256,
                           dt=2e-6, t_end=1.0, t_end_frac=0.8).validate()],
        checks=["mass_slope", "lambda_nonincreasing",
                "extinction_lower", "extinction_upper", "lambda_floor"],
    )

    presets["circle-stability"] = Preset(
        name="circle-stability",
        description="mode-3 perturbed circle under the normalized flow: "
                    "monotone suite, decay-rate fits, multiplier oscillation",
        configs=[RunConfig(flow_kind="normalized", init="perturbed:0.01,3",
                           n=256, dt=1e-3, t_end=10.0).validate()],
        checks=["mass_nondecreasing", "sigma_bar_nondecreasing",
                "sigma_bar_below_mass", "xi_tilde_nonincreasing",
                "dxi_tilde_nonincreasing", "oscillation",
                "decay_xi_tilde", "decay_c"],
    )

    presets["stationary-rigidity"] = Preset(
        name="stationary-rigidity",
        description="relax a perturbed circle to stationarity, then verify "
                    "the stationary-state identities and circle rigidity",
        configs=[RunConfig(flow_kind="normalized", init="perturbed:0.01,3",
                           n=256, dt=1e-3, t_end=30.0,
                           conv_tol=1e-6).validate()],
        checks=["stationary_residual", "sigma_sq_curvature",
                "first_integral", "rigidity"],
        special="stationary-rigidity",
    )

    presets["eps-limit"] = Preset(
        name="eps-limit",
        description="relaxed-constraint flow at decreasing epsilon: "
                    "the t=0.5 state approaches the normalized-flow state",
        configs=[],
        checks=["fg_identity", "eps_monotone_convergence"],
        special="eps-limit",
    )

    presets["roundtrip"] = Preset(
        name="roundtrip",
        description="map an original-flow run through the change of "
                    "variables and compare against a normalized-flow run",
        configs=[],
        checks=["roundtrip_discrepancy"],
        special="roundtrip",
    )

    presets["density-contrast"] = Preset(
        name="density-contrast",
        description="uniform-density flow vs classical curve shortening on "
                    "the same ellipse: grid-density uniformity contrast",
        configs=[
            RunConfig(flow_kind="original", init="ellipse:2,1,raw", n=256,
                      dt=1e-3, t_end=0.26).validate(),
            RunConfig(flow_kind="classical", init="ellipse:2,1,raw", n=256,
                      dt=3e-4, t_end=0.05).validate(),
        ],
        checks=["ucmcf_drift", "classical_cv_growth"],
    )

    return presets


PRESETS = _presets()

# every check name a preset may emit; validated at import time
IMPLEMENTED_CHECKS = {
    "mass_slope", "lambda_nonincreasing", "extinction_lower",
    "extinction_upper", "lambda_floor", "mass_nondecreasing",
    "sigma_bar_nondecreasing", "sigma_bar_below_mass",
    "xi_tilde_nonincreasing", "dxi_tilde_nonincreasing", "oscillation",
    "decay_xi_tilde", "decay_c", "stationary_residual", "sigma_sq_curvature",
    "first_integral", "rigidity", "fg_identity", "eps_monotone_convergence",
    "roundtrip_discrepancy", "ucmcf_drift", "classical_cv_growth",
    "dissipation",
}

for _p in PRESETS.values():
    _missing = set(_p.checks) - IMPLEMENTED_CHECKS
    if _missing:
        raise RuntimeError(
            f"preset {_p.name} names unimplemented checks: {sorted(_missing)}")


def preset(name):
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return PRESETS[name]
