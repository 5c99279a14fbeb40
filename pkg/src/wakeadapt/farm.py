"""Steady-state analytical wind-farm model.

Gaussian-profile velocity deficits (Bastankhah & Porte-Agel 2016, with the
turbulence-dependent expansion of Niayifar & Porte-Agel), yaw-induced wake
deflection, Crespo-Hernandez added turbulence, and actuator-disc turbine power
with a ``cos(yaw)**pP`` loss.

Coordinates are in the wind-aligned frame: ``x`` downstream, ``y`` lateral,
``z`` vertical. Positive yaw is counterclockwise seen from above and deflects
the wake towards ``+y``.

All functions broadcast over leading batch dimensions so the optimizer can
evaluate many yaw vectors in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

BETZ_CP = 16.0 / 27.0
YAW_LIMIT_DEG = 40.0
_CT_MAX = 0.9999


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a model formula."""


@dataclass(frozen=True)
class Turbine:
    """A single turbine.

    ``ct_curve`` is ``None`` (constant ``ct_default``) or a pair of sequences
    ``(wind_speeds, thrust_coefficients)`` interpolated linearly.
    """

    x: float
    y: float
    rotor_diameter: float = 178.3
    hub_height: float = 119.0
    cp_max: float = 0.45
    rated_power: float = 10.0e6
    ct_curve: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    ct_default: float = 0.8

    def __post_init__(self):
        if not self.rotor_diameter > 0:
            raise DomainError("rotor diameter must be positive")
        if not 0 < self.cp_max < BETZ_CP:
            raise DomainError(f"cp_max must lie in (0, 16/27), got {self.cp_max}")
        if not self.rated_power > 0:
            raise DomainError("rated power must be positive")
        if not 0 < self.ct_default < 1.2:
            raise DomainError("ct must lie in (0, 1.2)")
        if self.ct_curve is not None:
            speeds, cts = (tuple(float(v) for v in a) for a in self.ct_curve)
            if len(speeds) != len(cts) or len(speeds) < 2:
                raise DomainError("ct curve needs matching speed/ct arrays of length >= 2")
            if np.any(np.diff(speeds) <= 0):
                raise DomainError("ct curve speeds must be strictly increasing")
            if not all(0 < c < 1.2 for c in cts):
                raise DomainError("ct values must lie in (0, 1.2)")
            object.__setattr__(self, "ct_curve", (speeds, cts))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def rotor_area(self) -> float:
        return np.pi * (0.5 * self.rotor_diameter) ** 2

    def thrust_coefficient(self, wind_speed):
        """Thrust coefficient at ``wind_speed``, clipped just below 1."""
        wind_speed = np.asarray(wind_speed, dtype=float)
        if self.ct_curve is None:
            ct = np.full(wind_speed.shape, self.ct_default)
        else:
            ct = np.interp(wind_speed, *self.ct_curve)
        return np.minimum(ct, _CT_MAX)


@dataclass(frozen=True)
class FarmLayout:
    turbines: tuple[Turbine, ...]
    name: str = "farm"

    def __post_init__(self):
        turbines = tuple(self.turbines)
        object.__setattr__(self, "turbines", turbines)
        if not turbines:
            raise DomainError("a layout needs at least one turbine")
        xy = np.array([t.position for t in turbines])
        for i in range(len(turbines)):
            for j in range(i + 1, len(turbines)):
                min_gap = 0.5 * max(turbines[i].rotor_diameter, turbines[j].rotor_diameter)
                if np.hypot(*(xy[i] - xy[j])) < min_gap:
                    raise DomainError(f"turbines {i} and {j} are closer than 0.5 D")

    def __len__(self) -> int:
        return len(self.turbines)

    @classmethod
    def grid(cls, n_rows: int = 3, n_columns: int = 3, streamwise_spacing: float = 5.0,
             lateral_spacing: float = 3.0, name: str = "grid", **turbine_kwargs) -> "FarmLayout":
        """Rectangular layout with spacings in rotor diameters.

        A *row* is the set of turbines at one downstream position (row 0 faces
        the free stream); a *column* is one streamwise line. Turbine index is
        ``row * n_columns + column``.
        """
        d = turbine_kwargs.get("rotor_diameter", Turbine.rotor_diameter)
        turbines = [
            Turbine(x=r * streamwise_spacing * d, y=c * lateral_spacing * d, **turbine_kwargs)
            for r in range(n_rows)
            for c in range(n_columns)
        ]
        return cls(tuple(turbines), name=name)

    def rows(self, tol: float = 1e-6) -> list[list[int]]:
        """Turbine indices grouped by downstream position, upstream first."""
        xs = np.array([t.x for t in self.turbines])
        order = np.argsort(xs, kind="stable")
        groups: list[list[int]] = []
        last = None
        for i in order:
            if last is None or xs[i] - last > tol:
                groups.append([])
                last = xs[i]
            groups[-1].append(int(i))
        return groups

    def permuted(self, order: Sequence[int]) -> "FarmLayout":
        return FarmLayout(tuple(self.turbines[i] for i in order), name=self.name)


@dataclass(frozen=True)
class Ambient:
    wind_speed: float = 8.0
    turbulence_intensity: float = 0.05
    wind_direction: float = 0.0
    air_density: float = 1.225

    def __post_init__(self):
        if not self.wind_speed > 0:
            raise DomainError("wind speed must be positive")
        if not 0 < self.turbulence_intensity < 0.5:
            raise DomainError("turbulence intensity must lie in (0, 0.5)")
        if not self.air_density > 0:
            raise DomainError("air density must be positive")


@dataclass(frozen=True)
class WakeParams:
    """Tunable coefficients of the wake and power model.

    ``deflection_gain`` and ``deflection_asymmetry`` scale the lateral wake
    offset by ``gain * (1 + asymmetry * sign(yaw))``; the defaults leave the
    published deflection law untouched.
    """

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

    def __post_init__(self):
        if self.ka < 0 or self.kb < 0:
            raise DomainError("wake expansion coefficients must be non-negative")
        if not 1.0 <= self.yaw_power_exponent <= 3.0:
            raise DomainError("yaw power exponent must lie in [1, 3]")
        if not (self.alpha > 0 and self.beta > 0):
            raise DomainError("near-wake parameters must be positive")
        if self.superposition not in ("rss", "linear"):
            raise DomainError(f"unknown superposition rule {self.superposition!r}")
        if self.rotor_points not in (1, 4):
            raise DomainError("rotor_points must be 1 (hub) or 4")
        if not -1.0 < self.deflection_asymmetry < 1.0:
            raise DomainError("deflection asymmetry must lie in (-1, 1)")

    def perturbed(self, **changes) -> "WakeParams":
        return replace(self, **changes)


def table1_layout() -> FarmLayout:
    """Nine DTU 10 MW-class turbines, 3 x 3 at 5 D x 3 D spacing."""
    return FarmLayout.grid(3, 3, 5.0, 3.0, name="3x3-5Dx3D")


def _one_minus_sqrt_one_minus(a):
    # 1 - sqrt(1 - a) without cancellation for small a
    return a / (1.0 + np.sqrt(1.0 - a))


def _check_downstream(x):
    if np.any(np.asarray(x) <= 0):
        raise DomainError("downstream distance must be strictly positive")


def _check_ct(ct, allow_zero=False):
    ct = np.asarray(ct, dtype=float)
    low_ok = ct >= 0 if allow_zero else ct > 0
    if not np.all(low_ok & (ct < 1)):
        raise DomainError("thrust coefficient must lie in (0, 1)")


def _wake_shape(x, yaw_deg, ct, ti, diameter, params):
    """Wake widths and lateral centre offset at downstream distance ``x``."""
    yaw = np.radians(yaw_deg)
    cos_yaw = np.cos(yaw)
    ct_yaw = ct * cos_yaw
    sqrt_1mct = np.sqrt(1.0 - ct)
    sqrt_1mctc = np.sqrt(1.0 - ct_yaw)

    # rotor-plane speed of the expanded wake, relative to inflow
    u_r = 0.5 * (1.0 + sqrt_1mctc)
    sigma_z0 = 0.5 * diameter * np.sqrt(u_r / (1.0 + sqrt_1mct))
    sigma_y0 = sigma_z0 * cos_yaw
    x0 = (diameter * cos_yaw * (1.0 + sqrt_1mctc)
          / (np.sqrt(2.0) * (4.0 * params.alpha * ti + 2.0 * params.beta * (1.0 - sqrt_1mct))))
    k = params.ka * ti + params.kb

    theta = 0.3 * yaw / cos_yaw * _one_minus_sqrt_one_minus(ct_yaw)
    delta0 = np.tan(theta) * x0

    near = x < x0
    frac = np.where(near, x / x0, 1.0)
    sigma_start = 0.501 * diameter * np.sqrt(0.5 * ct)
    sigma_y_near = (1.0 - frac) * sigma_start + frac * sigma_y0
    sigma_z_near = (1.0 - frac) * sigma_start + frac * sigma_z0
    dx_far = np.maximum(x - x0, 0.0)
    sigma_y_far = k * dx_far + sigma_y0
    sigma_z_far = k * dx_far + sigma_z0
    sigma_y = np.where(near, sigma_y_near, sigma_y_far)
    sigma_z = np.where(near, sigma_z_near, sigma_z_far)

    c0 = _one_minus_sqrt_one_minus(ct)
    m0 = c0 * (2.0 - c0)
    e0 = c0 ** 2 - 3.0 * np.exp(1.0 / 12.0) * c0 + 3.0 * np.exp(1.0 / 3.0)
    sqrt_m0 = np.sqrt(m0)
    growth = 1.6 * np.sqrt(sigma_y_far * sigma_z_far / (sigma_y0 * sigma_z0))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = np.log((1.6 + sqrt_m0) * (growth - sqrt_m0)
                          / ((1.6 - sqrt_m0) * (growth + sqrt_m0)))
        scale = np.sqrt(sigma_y0 * sigma_z0 / (k * k * m0))
    bend = np.where((dx_far > 0) & (theta != 0), theta * scale * log_term, 0.0)
    far_delta = delta0 + e0 / 5.2 * bend
    delta = np.where(near, frac * delta0, far_delta)
    delta = delta * params.deflection_gain * (1.0 + params.deflection_asymmetry * np.sign(yaw_deg))
    return sigma_y, sigma_z, delta


def wake_deflection(yaw_deg, ct, x, params: WakeParams, turbine: Turbine, ti_local):
    """Lateral wake-centre offset in metres at distance ``x`` behind ``turbine``."""
    _check_downstream(x)
    _check_ct(ct)
    x, yaw_deg, ct, ti_local = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                                      for v in (x, yaw_deg, ct, ti_local)))
    _, _, delta = _wake_shape(x, yaw_deg, ct, ti_local, turbine.rotor_diameter, params)
    return delta[()] if delta.ndim == 0 else delta


def wake_deficit(x, y_off, z_off, yaw_deg, ct, params: WakeParams, turbine: Turbine, ti_local):
    """Fraction of the inflow speed lost at ``(x, y_off, z_off)`` relative to the rotor hub.

    ``ct`` may be zero (no thrust, no deficit).
    """
    _check_downstream(x)
    _check_ct(ct, allow_zero=True)
    x, y_off, z_off, yaw_deg, ct, ti_local = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, y_off, z_off, yaw_deg, ct, ti_local)))
    out = _deficit(x, y_off, z_off, yaw_deg, ct, ti_local, turbine.rotor_diameter, params)
    return out[()] if out.ndim == 0 else out


def _deficit(x, y_off, z_off, yaw_deg, ct, ti, diameter, params):
    safe_ct = np.maximum(ct, 1e-12)
    sigma_y, sigma_z, delta = _wake_shape(x, yaw_deg, safe_ct, ti, diameter, params)
    ct_yaw = safe_ct * np.cos(np.radians(yaw_deg))
    arg = np.clip(ct_yaw * diameter ** 2 / (8.0 * sigma_y * sigma_z), 0.0, 1.0)
    centre = _one_minus_sqrt_one_minus(arg)
    shape = np.exp(-0.5 * ((y_off - delta) / sigma_y) ** 2 - 0.5 * (z_off / sigma_z) ** 2)
    return np.where(ct > 0, centre * shape, 0.0)


def _added_turbulence(x, y_off, yaw_deg, ct, ti_ambient, ti_source, diameter, params):
    ct_yaw = ct * np.cos(np.radians(yaw_deg))
    induction = 0.5 * _one_minus_sqrt_one_minus(ct_yaw)
    added = (params.ti_a * induction ** params.ti_b * ti_ambient ** params.ti_c
             * (x / diameter) ** params.ti_d)
    sigma_y, _, delta = _wake_shape(x, yaw_deg, ct, ti_source, diameter, params)
    weight = np.exp(-0.5 * ((y_off - delta) / (params.ti_width * sigma_y)) ** 2)
    return weight * added


def _wind_frame(layout: FarmLayout, wind_direction: float):
    xy = np.array([t.position for t in layout.turbines], dtype=float)
    c, s = np.cos(wind_direction), np.sin(wind_direction)
    x = c * xy[:, 0] + s * xy[:, 1]
    y = -s * xy[:, 0] + c * xy[:, 1]
    z = np.array([t.hub_height for t in layout.turbines], dtype=float)
    return x, y, z


def solve_flow(layout: FarmLayout, ambient: Ambient, yaw_deg, params: WakeParams,
               wind_speed=None, turbulence_intensity=None):
    """Rotor-effective speed, local turbulence and thrust for every turbine.

    ``yaw_deg`` has shape ``(..., n_turbines)``. ``wind_speed`` and
    ``turbulence_intensity`` optionally override the ambient values and
    broadcast against the batch shape.

    Returns ``(speeds, ti_local, ct)``, each with the shape of ``yaw_deg``.
    """
    yaw = np.asarray(yaw_deg, dtype=float)
    n = len(layout)
    if yaw.shape[-1:] != (n,):
        raise ValueError(f"yaw vector length {yaw.shape[-1:]} does not match {n} turbines")
    batch = yaw.shape[:-1]
    u_inf = np.broadcast_to(np.asarray(ambient.wind_speed if wind_speed is None else wind_speed,
                                       dtype=float), batch)
    ti_inf = np.broadcast_to(np.asarray(ambient.turbulence_intensity if turbulence_intensity is None
                                        else turbulence_intensity, dtype=float), batch)

    x, y, z = _wind_frame(layout, ambient.wind_direction)
    order = np.argsort(x, kind="stable")
    speeds = np.empty(yaw.shape)
    tis = np.empty(yaw.shape)
    cts = np.empty(yaw.shape)

    if params.rotor_points == 1:
        offsets = [(0.0, 0.0)]
    else:
        offsets = [(0.25, 0.0), (-0.25, 0.0), (0.0, 0.25), (0.0, -0.25)]

    done: list[int] = []
    for i in order:
        turbine_i = layout.turbines[i]
        d_i = turbine_i.rotor_diameter
        u_sum = np.zeros(batch + (len(offsets),))
        ti_sq = np.zeros(batch)
        for j in done:
            dx = x[i] - x[j]
            if dx <= 1e-9:
                continue
            turbine_j = layout.turbines[j]
            d_j = turbine_j.rotor_diameter
            for p, (oy, oz) in enumerate(offsets):
                d = _deficit(dx, y[i] + oy * d_i - y[j], z[i] + oz * d_i - z[j],
                             yaw[..., j], cts[..., j], tis[..., j], d_j, params)
                loss = d * speeds[..., j]
                if params.superposition == "rss":
                    u_sum[..., p] += loss ** 2
                else:
                    u_sum[..., p] += loss
            added = _added_turbulence(dx, y[i] - y[j], yaw[..., j], cts[..., j], ti_inf,
                                      tis[..., j], d_j, params)
            ti_sq += added ** 2
        if params.superposition == "rss":
            u_sum = np.sqrt(u_sum)
        u_points = np.maximum(u_inf[..., None] - u_sum, 1e-6 * u_inf[..., None])
        speeds[..., i] = u_points.mean(axis=-1)
        tis[..., i] = np.sqrt(ti_inf ** 2 + ti_sq)
        cts[..., i] = turbine_i.thrust_coefficient(speeds[..., i])
        done.append(int(i))
    return speeds, tis, cts


def effective_speeds(layout: FarmLayout, ambient: Ambient, yaw_deg, params: WakeParams):
    """Rotor-effective wind speed of every turbine, in m/s."""
    yaw = np.asarray(yaw_deg, dtype=float)
    if yaw.shape[-1:] != (len(layout),):
        raise ValueError("yaw vector and layout lengths differ")
    return solve_flow(layout, ambient, yaw, params)[0]


def turbine_power(u_eff, yaw_deg, turbine: Turbine, params: WakeParams, air_density: float = 1.225):
    """Actuator-disc power in watts, clipped at rated power."""
    u = np.asarray(u_eff, dtype=float)
    if np.any(u < 0):
        raise DomainError("wind speed must be non-negative")
    loss = np.abs(np.cos(np.radians(yaw_deg))) ** params.yaw_power_exponent
    p = 0.5 * air_density * turbine.rotor_area * turbine.cp_max * u ** 3 * loss
    p = np.minimum(p, turbine.rated_power)
    return p[()] if np.ndim(p) == 0 else p


def farm_power(layout: FarmLayout, ambient: Ambient, yaw_deg, params: WakeParams,
               wind_speed=None, turbulence_intensity=None):
    """Per-turbine powers and their total, in watts.

    Broadcasts over leading dimensions of ``yaw_deg``.
    """
    yaw = np.asarray(yaw_deg, dtype=float)
    speeds, _, _ = solve_flow(layout, ambient, yaw, params, wind_speed, turbulence_intensity)
    powers = np.empty(speeds.shape)
    for i, turbine in enumerate(layout.turbines):
        powers[..., i] = turbine_power(speeds[..., i], yaw[..., i], turbine, params,
                                       ambient.air_density)
    return powers, powers.sum(axis=-1)


@dataclass(frozen=True)
class FarmModel:
    """Bundle of layout, ambient state and wake coefficients."""

    layout: FarmLayout
    ambient: Ambient = field(default_factory=Ambient)
    params: WakeParams = field(default_factory=WakeParams)

    @property
    def n_turbines(self) -> int:
        return len(self.layout)

    def powers(self, yaw_deg) -> np.ndarray:
        return farm_power(self.layout, self.ambient, yaw_deg, self.params)[0]

    def total(self, yaw_deg) -> np.ndarray:
        return farm_power(self.layout, self.ambient, yaw_deg, self.params)[1]

    def greedy_powers(self) -> np.ndarray:
        return self.powers(np.zeros(self.n_turbines))

    def with_ambient(self, ambient: Ambient) -> "FarmModel":
        return replace(self, ambient=ambient)
