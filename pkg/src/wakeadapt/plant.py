"""Synthetic plant standing in for a high-fidelity wind-farm simulation.

The truth is the analytical farm model with perturbed coefficients. Each
operating point produces a 1 Hz generator-power time series with a first-order
transient from the previous set point and AR(1) fluctuations; the steady-state
measurement is a trailing boxcar average taken after the transient is cut.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.stats import qmc

from . import rng as rng_mod
from .farm import Ambient, FarmModel, WakeParams, table1_layout

ROW_LOWER_DEG = (-25.0, -20.0, -7.0)
ROW_UPPER_DEG = (18.0, 10.0, 5.0)


def default_truth_params(surrogate: WakeParams | None = None) -> WakeParams:
    """Perturbed coefficients used as the default plant truth."""
    base = surrogate or WakeParams()
    return replace(
        base,
        ka=base.ka * 1.25,
        kb=base.kb * 1.25,
        alpha=base.alpha * 1.3,
        ti_width=2.0,
        yaw_power_exponent=2.2,
        deflection_gain=base.deflection_gain * 1.15,
        deflection_asymmetry=0.2,
        rotor_points=4,
    )


@dataclass(frozen=True)
class PlantSpec:
    truth: FarmModel = field(default_factory=lambda: FarmModel(table1_layout(), Ambient(),
                                                               default_truth_params()))
    ar_coefficient: float = 0.99
    noise_std: float = 0.01
    time_constant: float = 60.0
    sample_period: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise ValueError("AR(1) coefficient must lie in [0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise std must be non-negative")
        if not self.time_constant > 0:
            raise ValueError("transient time constant must be positive")
        if not self.sample_period > 0:
            raise ValueError("sample period must be positive")


@dataclass(frozen=True)
class PowerSeries:
    """Uniformly sampled per-turbine power; ``samples`` has shape ``(T, n)``.

    ``start_time`` is the timestamp of the first sample minus one period, so
    sample ``k`` sits at ``start_time + (k + 1) * sample_period``.
    """

    sample_period: float
    samples: np.ndarray
    op_starts: tuple[int, ...] = (0,)
    start_time: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.sample_period * np.arange(1, len(self.samples) + 1)

    @property
    def duration(self) -> float:
        return len(self.samples) * self.sample_period

    def concat(self, other: "PowerSeries") -> "PowerSeries":
        if other.sample_period != self.sample_period:
            raise ValueError("sample periods differ")
        offset = len(self.samples)
        return PowerSeries(self.sample_period, np.vstack([self.samples, other.samples]),
                           self.op_starts + tuple(offset + s for s in other.op_starts),
                           self.start_time)

    def segment(self, k: int) -> "PowerSeries":
        """Samples belonging to the ``k``-th operating point."""
        bounds = self.op_starts + (len(self.samples),)
        lo, hi = bounds[k], bounds[k + 1]
        return PowerSeries(self.sample_period, self.samples[lo:hi], (0,),
                           self.start_time + lo * self.sample_period)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s"] + [f"power_w_{i}" for i in range(self.samples.shape[1])])
            for t, row in zip(self.times, self.samples):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _window(horizon: float, period: float) -> int:
    w = horizon / period
    if w < 1 or abs(w - round(w)) > 1e-9:
        raise ValueError("horizon must be a positive multiple of the sample period")
    return int(round(w))


def moving_average(series: PowerSeries, horizon: float) -> PowerSeries:
    """Causal trailing boxcar mean; the first samples average what is available."""
    w = _window(horizon, series.sample_period)
    if w > len(series.samples):
        raise ValueError("filter horizon exceeds the series span")
    x = np.asarray(series.samples, dtype=float)
    c = np.cumsum(np.vstack([np.zeros((1, x.shape[1])), x]), axis=0)
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - w, 0)
    out = (c[idx] - c[lo]) / (idx - lo)[:, None]
    return PowerSeries(series.sample_period, out, series.op_starts, series.start_time)


def extract_measurement(segment: PowerSeries, horizon: float = 300.0, cut: float = 300.0) -> np.ndarray:
    """Filtered steady-state power of one operating-point segment (watts per turbine)."""
    w = _window(horizon, segment.sample_period)
    n_cut = int(round(cut / segment.sample_period))
    if len(segment.samples) < n_cut + w:
        raise ValueError("segment shorter than transient cut plus filter horizon")
    return np.asarray(segment.samples[-w:], dtype=float).mean(axis=0)


def extract_windows(segment: PowerSeries, horizon: float, cut: float = 300.0) -> np.ndarray:
    """All non-overlapping trailing windows after the cut, oldest first.

    A 600 s segment with a 300 s cut yields one 300 s window or two 150 s
    windows. Returns shape ``(n_windows, n_turbines)``.
    """
    w = _window(horizon, segment.sample_period)
    n_cut = int(round(cut / segment.sample_period))
    usable = len(segment.samples) - n_cut
    if usable < w:
        raise ValueError("segment shorter than transient cut plus filter horizon")
    k = usable // w
    tail = np.asarray(segment.samples[len(segment.samples) - k * w:], dtype=float)
    return tail.reshape(k, w, -1).mean(axis=1)


class Plant:
    """Stateful emulator: carries the transient level, AR state and RNG between OPs."""

    def __init__(self, spec: PlantSpec, generator: np.random.Generator | None = None):
        self.spec = spec
        self.rng = generator if generator is not None else rng_mod.stream(spec.seed, "plant")
        self.greedy = spec.truth.greedy_powers()
        self.noise_scale = spec.noise_std * self.greedy
        self.time = 0.0
        self.level = self.greedy.copy()
        self.noise = self.rng.standard_normal(len(self.greedy)) * self.noise_scale
        self.current_yaw = np.zeros(len(self.greedy))

    @property
    def n_turbines(self) -> int:
        return len(self.greedy)

    def steady_power(self, yaw_deg) -> np.ndarray:
        return self.spec.truth.powers(np.asarray(yaw_deg, dtype=float))

    def simulate_op(self, yaw_deg, duration: float = 600.0) -> PowerSeries:
        """Advance the plant through one operating point."""
        if not duration > 0:
            raise ValueError("duration must be positive")
        spec = self.spec
        dt = spec.sample_period
        steps = int(round(duration / dt))
        target = self.steady_power(yaw_deg)
        elapsed = dt * np.arange(1, steps + 1)
        decay = np.exp(-elapsed / spec.time_constant)[:, None]
        deterministic = target + (self.level - target) * decay

        rho = spec.ar_coefficient
        innov = self.rng.standard_normal((steps, self.n_turbines)) * (np.sqrt(1 - rho ** 2)
                                                                      * self.noise_scale)
        noise, _ = lfilter([1.0], [1.0, -rho], innov, axis=0, zi=rho * self.noise[None, :])
        self.noise = noise[-1].copy()
        samples = np.maximum(deterministic + noise, 0.0)

        series = PowerSeries(dt, samples, (0,), self.time)
        self.level = deterministic[-1]
        self.time += steps * dt
        self.current_yaw = np.asarray(yaw_deg, dtype=float).copy()
        return series

    def get_state(self) -> dict:
        return {
            "time": self.time,
            "level": self.level.tolist(),
            "noise": self.noise.tolist(),
            "current_yaw": self.current_yaw.tolist(),
            "rng": rng_mod.get_state(self.rng),
        }

    def set_state(self, state: dict) -> None:
        self.time = float(state["time"])
        self.level = np.array(state["level"], dtype=float)
        self.noise = np.array(state["noise"], dtype=float)
        self.current_yaw = np.array(state["current_yaw"], dtype=float)
        self.rng = rng_mod.from_state(state["rng"])


def simulate_op(spec: PlantSpec, yaw_deg, duration: float = 600.0, carry: dict | None = None):
    """Functional wrapper: returns ``(segment, new_carry_state)``."""
    plant = Plant(spec)
    if carry is not None:
        plant.set_state(carry)
    seg = plant.simulate_op(yaw_deg, duration)
    return seg, plant.get_state()


def row_bounds_to_turbines(rows: Sequence[Sequence[int]], lower_rows, upper_rows, n_turbines: int):
    """Expand per-row yaw bounds to per-turbine bounds."""
    if len(lower_rows) != len(rows) or len(upper_rows) != len(rows):
        raise ValueError(f"need one bound per row ({len(rows)} rows)")
    lo = np.empty(n_turbines)
    hi = np.empty(n_turbines)
    for r, members in enumerate(rows):
        lo[members] = lower_rows[r]
        hi[members] = upper_rows[r]
    if np.any(lo > hi):
        raise ValueError("infeasible yaw bounds: lower exceeds upper")
    return lo, hi


@dataclass
class OperatingPoint:
    yaw: np.ndarray
    powers: np.ndarray
    normalized: np.ndarray
    index: int
    t_start: float
    t_end: float
    source: str = "init"

    def to_dict(self) -> dict:
        return {"yaw": self.yaw.tolist(), "powers": self.powers.tolist(),
                "normalized": self.normalized.tolist(), "index": self.index,
                "t_start": self.t_start, "t_end": self.t_end, "source": self.source}

    @classmethod
    def from_dict(cls, d) -> "OperatingPoint":
        return cls(np.array(d["yaw"], dtype=float), np.array(d["powers"], dtype=float),
                   np.array(d["normalized"], dtype=float), d["index"], d["t_start"], d["t_end"],
                   d.get("source", "init"))


def sample_initial_yaws(rows, lower_rows, upper_rows, n_turbines: int, n_ops: int = 20,
                        duplicate_fraction: float = 0.25, generator=None, tie_rows: bool = True,
                        include_greedy: bool = True, decimals: int = 1) -> np.ndarray:
    """Initial yaw set: Latin-hypercube draws within row bounds plus exact duplicates.

    The first OP is greedy when ``include_greedy`` (it serves the ambient
    estimate). ``round(n_ops * duplicate_fraction)`` entries repeat earlier
    OPs so they can inform the noise estimate.
    """
    if n_ops < 1:
        raise ValueError("need at least one operating point")
    if not 0.0 <= duplicate_fraction < 1.0:
        raise ValueError("duplicate fraction must lie in [0, 1)")
    gen = generator if generator is not None else np.random.default_rng(0)
    lo, hi = row_bounds_to_turbines(rows, lower_rows, upper_rows, n_turbines)
    n_dup = int(round(n_ops * duplicate_fraction))
    n_distinct = n_ops - n_dup
    distinct = []
    if include_greedy:
        zero = np.clip(np.zeros(n_turbines), lo, hi)
        distinct.append(zero)
    n_free = len(rows) if tie_rows else n_turbines
    sampler = qmc.LatinHypercube(d=n_free, seed=gen)
    while len(distinct) < n_distinct:
        batch = sampler.random(n_distinct - len(distinct))
        for u in batch:
            if tie_rows:
                vals = np.asarray(lower_rows) + u * (np.asarray(upper_rows) - np.asarray(lower_rows))
                yaw = np.empty(n_turbines)
                for r, members in enumerate(rows):
                    yaw[members] = vals[r]
            else:
                yaw = lo + u * (hi - lo)
            yaw = np.clip(np.round(yaw, decimals), lo, hi)
            if not any(np.array_equal(yaw, d) for d in distinct):
                distinct.append(yaw)
    order = list(distinct)
    for _ in range(n_dup):
        src = int(gen.integers(0, n_distinct))
        src_pos = next(i for i, y in enumerate(order) if y is distinct[src])
        pos = int(gen.integers(src_pos + 1, len(order) + 1))
        order.insert(pos, distinct[src].copy())
    return np.array(order)


def make_initial_dataset(plant: Plant, rows, lower_rows=ROW_LOWER_DEG, upper_rows=ROW_UPPER_DEG,
                         n_ops: int = 20, duplicate_fraction: float = 0.25, seed: int = 0,
                         tie_rows: bool = True, duration: float = 600.0, horizon: float = 300.0,
                         cut: float = 300.0, reference=None) -> list[OperatingPoint]:
    """Run the initial OP schedule on ``plant`` and return one OP per filter window.

    A horizon shorter than ``duration - cut`` yields several measurements per
    OP (e.g. two with 150 s).
    """
    gen = rng_mod.stream(seed, "sampler")
    yaws = sample_initial_yaws(rows, lower_rows, upper_rows, plant.n_turbines, n_ops,
                               duplicate_fraction, gen, tie_rows)
    ref = plant.greedy if reference is None else np.asarray(reference, dtype=float)
    ops = []
    for yaw in yaws:
        t0 = plant.time
        seg = plant.simulate_op(yaw, duration)
        for m in extract_windows(seg, horizon, cut):
            ops.append(OperatingPoint(yaw.copy(), m, m / ref, len(ops), t0, plant.time, "init"))
    return ops
