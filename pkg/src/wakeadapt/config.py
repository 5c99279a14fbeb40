"""Campaign configuration: nested dataclasses read from and written to TOML.

Key names carry their units (``wind_speed_ms``, ``yaw_upper_deg``...).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .adaptation import ObjectiveForm, OptimizerOptions, Scheme
from .farm import Ambient, FarmLayout, FarmModel, Turbine, WakeParams
from .gp import KernelKind
from .plant import ROW_LOWER_DEG, ROW_UPPER_DEG, PlantSpec, default_truth_params


class ConfigError(ValueError):
    """Invalid or inconsistent campaign configuration."""


@dataclass
class LayoutConfig:
    name: str = "3x3-5Dx3D"
    rows: int = 3
    columns: int = 3
    streamwise_spacing_d: float = 5.0
    lateral_spacing_d: float = 3.0
    rotor_diameter_m: float = 178.3
    hub_height_m: float = 119.0
    cp_max: float = 0.45
    rated_power_w: float = 10.0e6
    ct: float = 0.8
    ct_curve_speeds_ms: list = field(default_factory=list)
    ct_curve_values: list = field(default_factory=list)

    def build(self) -> FarmLayout:
        curve = None
        if self.ct_curve_speeds_ms:
            curve = (tuple(self.ct_curve_speeds_ms), tuple(self.ct_curve_values))
        return FarmLayout.grid(self.rows, self.columns, self.streamwise_spacing_d,
                               self.lateral_spacing_d, name=self.name,
                               rotor_diameter=self.rotor_diameter_m, hub_height=self.hub_height_m,
                               cp_max=self.cp_max, rated_power=self.rated_power_w,
                               ct_curve=curve, ct_default=self.ct)


@dataclass
class AmbientConfig:
    wind_speed_ms: float = 8.0
    turbulence_intensity: float = 0.05
    wind_direction_rad: float = 0.0
    air_density_kgm3: float = 1.225

    def build(self) -> Ambient:
        return Ambient(self.wind_speed_ms, self.turbulence_intensity, self.wind_direction_rad,
                       self.air_density_kgm3)


@dataclass
class WakeConfig:
    ka: float = 0.38
    kb: float = 0.004
    alpha: float = 0.58
    beta: float = 0.077
    ti_a: float = 0.73
    ti_b: float = 0.8325
    ti_c: float = 0.0325
    ti_d: float = -0.32
    ti_width: float = 2.0
    yaw_power_exponent: float = 1.88
    superposition: str = "rss"
    rotor_points: int = 1
    deflection_gain: float = 1.0
    deflection_asymmetry: float = 0.0

    def build(self) -> WakeParams:
        return WakeParams(**dataclasses.asdict(self))

    @classmethod
    def from_params(cls, p: WakeParams) -> "WakeConfig":
        return cls(**dataclasses.asdict(p))


@dataclass
class PlantConfig:
    wake: WakeConfig = field(default_factory=lambda: WakeConfig.from_params(default_truth_params()))
    ambient: AmbientConfig = field(default_factory=AmbientConfig)
    ar_coefficient: float = 0.99
    noise_std_frac: float = 0.01
    time_constant_s: float = 60.0
    sample_period_s: float = 1.0


@dataclass
class DatasetConfig:
    n_ops: int = 20
    duplicate_fraction: float = 0.25
    yaw_lower_deg: list = field(default_factory=lambda: list(ROW_LOWER_DEG))
    yaw_upper_deg: list = field(default_factory=lambda: list(ROW_UPPER_DEG))
    op_duration_s: float = 600.0
    filter_horizon_s: float = 300.0
    transient_cut_s: float = 300.0
    tie_rows: bool = True


@dataclass
class OptimizerConfig:
    yaw_lower_deg: list = field(default_factory=lambda: [-30.0, -30.0, -10.0])
    yaw_upper_deg: list = field(default_factory=lambda: [30.0, 30.0, 10.0])
    variance_weight: float = 0.0
    objective_form: str = "squared"
    filter_gain: float = 1.0
    n_starts: int = 8
    grid_resolution_deg: float = 0.0
    tie_rows: bool = True
    max_grid_nodes: int = 100_000


@dataclass
class GpConfig:
    bounded: bool = True
    noise_lower: float = 0.0
    length_scale_lower_deg: float = 1.0
    n_restarts: int = 8
    refit: bool = True
    prior_signal_std: float = 0.1
    prior_noise_std: float = 0.01
    prior_length_scale_deg: float = 10.0


@dataclass
class EstimationConfig:
    enabled: bool = True
    wind_speed_range_ms: list = field(default_factory=lambda: [6.0, 10.0])
    ti_range: list = field(default_factory=lambda: [0.02, 0.15])


@dataclass
class CampaignConfig:
    seed: int = 0
    scheme: str = "magp"
    kernel: str = "se"
    iterations: int = 10
    output_dir: str = "campaign_out"
    oracle: bool = True
    oracle_resolution_deg: float = 1.0
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    ambient: AmbientConfig = field(default_factory=AmbientConfig)
    surrogate: WakeConfig = field(default_factory=WakeConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    gp: GpConfig = field(default_factory=GpConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            Scheme.parse(self.scheme)
            KernelKind.parse(self.kernel)
            ObjectiveForm.parse(self.optimizer.objective_form)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.iterations < 0:
            raise ConfigError("iteration count must be non-negative")
        if self.dataset.n_ops < 0:
            raise ConfigError("n_ops must be non-negative")
        rows = self.layout.rows
        for name, vec in (("dataset.yaw_lower_deg", self.dataset.yaw_lower_deg),
                          ("dataset.yaw_upper_deg", self.dataset.yaw_upper_deg),
                          ("optimizer.yaw_lower_deg", self.optimizer.yaw_lower_deg),
                          ("optimizer.yaw_upper_deg", self.optimizer.yaw_upper_deg)):
            if len(vec) != rows:
                raise ConfigError(f"{name} needs {rows} entries (one per row), got {len(vec)}")
        for lo, hi in ((self.dataset.yaw_lower_deg, self.dataset.yaw_upper_deg),
                       (self.optimizer.yaw_lower_deg, self.optimizer.yaw_upper_deg)):
            if any(a > b for a, b in zip(lo, hi)):
                raise ConfigError("lower yaw bound exceeds upper bound")
        if not 0.0 <= self.optimizer.filter_gain <= 1.0:
            raise ConfigError("filter gain must lie in [0, 1]")
        d = self.dataset
        if d.op_duration_s < d.filter_horizon_s + d.transient_cut_s:
            raise ConfigError("OP duration must cover the transient cut plus the filter horizon")

    # -- builders ---------------------------------------------------------------

    @property
    def scheme_enum(self) -> Scheme:
        return Scheme.parse(self.scheme)

    def build_layout(self) -> FarmLayout:
        return self.layout.build()

    def build_surrogate_model(self) -> FarmModel:
        return FarmModel(self.build_layout(), self.ambient.build(), self.surrogate.build())

    def build_plant_spec(self) -> PlantSpec:
        p = self.plant
        truth = FarmModel(self.build_layout(), p.ambient.build(), p.wake.build())
        return PlantSpec(truth, p.ar_coefficient, p.noise_std_frac, p.time_constant_s,
                         p.sample_period_s, self.seed)

    def build_optimizer_options(self) -> OptimizerOptions:
        from .plant import row_bounds_to_turbines
        layout = self.build_layout()
        rows = layout.rows()
        lo, hi = row_bounds_to_turbines(rows, self.optimizer.yaw_lower_deg,
                                        self.optimizer.yaw_upper_deg, len(layout))
        o = self.optimizer
        return OptimizerOptions(tuple(lo), tuple(hi), o.variance_weight, o.objective_form,
                                o.filter_gain, o.n_starts, o.grid_resolution_deg or None,
                                tuple(tuple(r) for r in rows) if o.tie_rows else None,
                                o.max_grid_nodes)

    def gp_options(self) -> dict:
        g = self.gp
        return {"bounded": g.bounded, "noise_lower": g.noise_lower or None,
                "length_scale_lower": g.length_scale_lower_deg, "n_restarts": g.n_restarts}

    # -- (de)serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        try:
            return _build(cls, d)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed configuration: {exc}") from None

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "CampaignConfig":
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "CampaignConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from None
        return cls.from_toml(text)

    def save(self, path) -> None:
        Path(path).write_text(self.to_toml())

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "CampaignConfig":
        return CampaignConfig.from_dict({**self.to_dict(), **changes})


def _build(cls, data):
    if not isinstance(data, dict):
        raise TypeError(f"expected a table for {cls.__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = known[name].type
        target = _NESTED.get((cls.__name__, name))
        kwargs[name] = _build(target, value) if target is not None else value
    return cls(**kwargs)


_NESTED = {
    ("CampaignConfig", "layout"): LayoutConfig,
    ("CampaignConfig", "ambient"): AmbientConfig,
    ("CampaignConfig", "surrogate"): WakeConfig,
    ("CampaignConfig", "plant"): PlantConfig,
    ("CampaignConfig", "dataset"): DatasetConfig,
    ("CampaignConfig", "optimizer"): OptimizerConfig,
    ("CampaignConfig", "gp"): GpConfig,
    ("CampaignConfig", "estimation"): EstimationConfig,
    ("PlantConfig", "wake"): WakeConfig,
    ("PlantConfig", "ambient"): AmbientConfig,
}
