"""Campaign orchestration: initial dataset, ambient estimate, iterations, artifacts."""
from __future__ import annotations

import csv
import functools
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .adaptation import (AmbientEstimate, CorrectedModel, IterationRecord, LoopState,
                         OptimizerOptions, Surrogate, estimate_ambient, optimize_yaw, run_iteration)
from .config import CampaignConfig, ConfigError
from .farm import Ambient, FarmModel
from .gp import Hyperparameters
from .plant import OperatingPoint, Plant, make_initial_dataset

logger = logging.getLogger(__name__)

NORMALIZATION = "noiseless truth-model greedy power per turbine"
CHECKPOINT = "checkpoint.json"


@dataclass
class CampaignState:
    """Everything needed to continue a campaign bit-for-bit."""

    config: CampaignConfig
    model: CorrectedModel
    dataset: list
    records: list
    current_yaw: np.ndarray
    reference: np.ndarray
    plant_state: dict
    ambient_estimate: AmbientEstimate | None = None

    @property
    def iteration(self) -> int:
        return len(self.records)

    @property
    def config_hash(self) -> str:
        return self.config.digest()

    def to_dict(self) -> dict:
        est = self.ambient_estimate
        return {
            "config_hash": self.config_hash,
            "config": self.config.to_dict(),
            "model": self.model.to_dict(),
            "dataset": [op.to_dict() for op in self.dataset],
            "records": [r.to_dict() for r in self.records],
            "current_yaw": self.current_yaw.tolist(),
            "reference": self.reference.tolist(),
            "plant_state": self.plant_state,
            "ambient_estimate": None if est is None else
            {"wind_speed": est.wind_speed, "turbulence_intensity": est.turbulence_intensity,
             "residual": est.residual},
        }

    @classmethod
    def from_dict(cls, d) -> "CampaignState":
        config = CampaignConfig.from_dict(d["config"])
        if config.digest() != d["config_hash"]:
            raise ConfigError("checkpoint config hash does not match its configuration")
        est = d.get("ambient_estimate")
        est = None if est is None else AmbientEstimate(**est)
        reference = np.array(d["reference"], dtype=float)
        surrogate = _surrogate(config, reference, est)
        return cls(config, CorrectedModel.from_dict(d["model"], surrogate),
                   [OperatingPoint.from_dict(o) for o in d["dataset"]],
                   [IterationRecord.from_dict(r) for r in d["records"]],
                   np.array(d["current_yaw"], dtype=float), reference, d["plant_state"], est)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "CampaignState":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read checkpoint {path}: {exc}") from None
        return cls.from_dict(data)


def _surrogate(config: CampaignConfig, reference, estimate: AmbientEstimate | None) -> Surrogate:
    model = config.build_surrogate_model()
    if estimate is not None:
        a = model.ambient
        model = model.with_ambient(Ambient(estimate.wind_speed, estimate.turbulence_intensity,
                                           a.wind_direction, a.air_density))
    return Surrogate(model, reference)


def _greedy_measurement(ops):
    greedy = [op.powers for op in ops if not np.any(op.yaw)]
    return np.mean(greedy, axis=0) if greedy else None


def initialize(config: CampaignConfig) -> tuple[CampaignState, Plant]:
    """Run the initial OP schedule, estimate the ambient state and fit the GPs."""
    spec = config.build_plant_spec()
    plant = Plant(spec, rng_mod.stream(config.seed, "plant"))
    reference = plant.greedy.copy()
    rows = config.build_layout().rows()
    d = config.dataset
    ops = []
    if d.n_ops:
        ops = make_initial_dataset(plant, rows, d.yaw_lower_deg, d.yaw_upper_deg, d.n_ops,
                                   d.duplicate_fraction, config.seed, d.tie_rows, d.op_duration_s,
                                   d.filter_horizon_s, d.transient_cut_s, reference)

    estimate = None
    greedy = _greedy_measurement(ops)
    if config.estimation.enabled and greedy is not None:
        estimate = estimate_ambient(config.build_surrogate_model(), greedy,
                                    tuple(config.estimation.wind_speed_range_ms),
                                    tuple(config.estimation.ti_range))
    surrogate = _surrogate(config, reference, estimate)

    g = config.gp
    prior = Hyperparameters(g.prior_signal_std, g.prior_noise_std,
                            (g.prior_length_scale_deg,) * surrogate.n_turbines)
    groups = config.build_layout().rows() if config.optimizer.tie_rows else None
    model = CorrectedModel.empty(config.scheme_enum, surrogate, config.kernel, prior, groups,
                                 **config.gp_options())
    if ops:
        yaws = np.array([op.yaw for op in ops])
        norm = np.array([op.normalized for op in ops])
        model = model.assimilate(yaws, norm, refit=True,
                                 seed=rng_mod.derived_seed(config.seed, "fit", 0))
        best = int(np.argmax(norm @ (reference / reference.sum())))
        current = ops[best].yaw.copy()
    else:
        current = np.zeros(surrogate.n_turbines)
    state = CampaignState(config, model, ops, [], current, reference, plant.get_state(), estimate)
    return state, plant


def restore_plant(state: CampaignState) -> Plant:
    plant = Plant(state.config.build_plant_spec(), rng_mod.stream(state.config.seed, "plant"))
    plant.set_state(state.plant_state)
    return plant


def advance(state: CampaignState, plant: Plant, opts: OptimizerOptions) -> IterationRecord:
    """One closed-loop iteration; ``state`` is updated only on success."""
    c = state.config
    d = c.dataset
    loop = LoopState(state.model, state.current_yaw, state.reference, c.seed, state.iteration,
                     c.gp.refit, d.op_duration_s, d.filter_horizon_s, d.transient_cut_s)
    t0 = plant.time
    record = run_iteration(loop, plant, opts)
    state.model = loop.model
    state.current_yaw = loop.current_yaw
    state.records.append(record)
    state.dataset.append(OperatingPoint(record.applied_yaw.copy(), record.measured_powers,
                                        record.measured_normalized, len(state.dataset), t0,
                                        plant.time, f"iteration-{record.iteration}"))
    state.plant_state = plant.get_state()
    return record


# -- oracle -------------------------------------------------------------------------


def truth_model(config: CampaignConfig) -> FarmModel:
    return config.build_plant_spec().truth


def truth_gain(config: CampaignConfig, yaw) -> np.ndarray:
    """Noiseless plant gain over greedy operation."""
    truth = truth_model(config)
    return truth.total(np.asarray(yaw, dtype=float)) / truth.total(np.zeros(truth.n_turbines)) - 1.0


@dataclass(frozen=True)
class OracleResult:
    yaw: np.ndarray
    gain: float
    resolution: float


def plant_optimum(config: CampaignConfig, resolution: float | None = None) -> OracleResult:
    """Brute-force grid optimum of the noiseless plant over the optimizer box."""
    res = float(resolution or config.oracle_resolution_deg)
    d = config.to_dict()
    key = json.dumps({k: d[k] for k in ("plant", "layout", "optimizer")}, sort_keys=True)
    yaw, gain = _oracle_cached(key, res)
    return OracleResult(np.array(yaw), gain, res)


@functools.lru_cache(maxsize=16)
def _oracle_cached(key: str, resolution: float):
    parts = json.loads(key)
    config = CampaignConfig.from_dict({"plant": parts["plant"], "layout": parts["layout"],
                                       "optimizer": parts["optimizer"]})
    truth = truth_model(config)
    base = truth.total(np.zeros(truth.n_turbines))
    opts = config.build_optimizer_options()

    def evaluate(yaw):
        return truth.powers(yaw), np.zeros(yaw.shape)

    grid_opts = replace(opts, grid_resolution=resolution, n_starts=0)
    best = optimize_yaw(evaluate, grid_opts, weights=np.ones(truth.n_turbines) / base)
    yaw = best.grid_best
    gain = float(truth.total(yaw) / base - 1.0)
    return tuple(np.asarray(yaw).tolist()), gain


# -- artifacts ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def iterations_csv(state: CampaignState) -> str:
    n = len(state.reference)
    header = (["iteration"] + [f"applied_yaw_{t}_deg" for t in range(n)]
              + [f"proposed_yaw_{t}_deg" for t in range(n)]
              + [f"power_{t}_w" for t in range(n)]
              + [f"normalized_{t}" for t in range(n)]
              + [f"predicted_{t}" for t in range(n)]
              + ["measured_total_normalized", "truth_total_normalized", "objective",
                 "optimizer_converged"]
              + [f"gp_{t}_{name}" for t in range(n)
                 for name in ("signal_std", "noise_std", "mean_length_scale_deg")])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in state.records:
        hyp = []
        for h in r.hyperparameters:
            hyp += [h.signal_std, h.noise_std, float(np.mean(h.length_scales))]
        w.writerow([_fmt(v) for v in
                    [r.iteration, *r.applied_yaw, *r.proposed_yaw, *r.measured_powers,
                     *r.measured_normalized, *r.predicted_normalized, r.normalized_total,
                     r.truth_total_normalized, r.objective_value, r.optimizer_converged, *hyp]])
    return buf.getvalue()


def dataset_csv(state: CampaignState) -> str:
    n = len(state.reference)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "source", "t_start_s", "t_end_s"] + [f"yaw_{t}_deg" for t in range(n)]
               + [f"power_{t}_w" for t in range(n)] + [f"normalized_{t}" for t in range(n)])
    for op in state.dataset:
        w.writerow([str(op.index), op.source, _fmt(op.t_start), _fmt(op.t_end)]
                   + [_fmt(v) for v in [*op.yaw, *op.powers, *op.normalized]])
    return buf.getvalue()


def summarize(state: CampaignState) -> dict:
    config = state.config
    ref_w = state.reference / state.reference.sum()
    init_ops = [op for op in state.dataset if op.source == "init"]
    init_gain = None
    if init_ops:
        best = max(init_ops, key=lambda op: float(op.normalized @ ref_w))
        init_gain = float(truth_gain(config, best.yaw))
    if state.records:
        final_yaw = state.records[-1].applied_yaw
        final_gain = float(truth_gain(config, final_yaw))
    else:
        final_yaw = best.yaw if init_ops else np.zeros(len(state.reference))
        final_gain = init_gain if init_gain is not None else 0.0
    est = state.ambient_estimate
    out = {
        "scheme": config.scheme_enum.value,
        "kernel": config.kernel,
        "seed": config.seed,
        "iterations": state.iteration,
        "config_hash": state.config_hash,
        "normalization": NORMALIZATION,
        "reference_powers_w": state.reference.tolist(),
        "ambient_estimate": None if est is None else
        {"wind_speed_ms": est.wind_speed, "turbulence_intensity": est.turbulence_intensity},
        "best_initial_gain": init_gain,
        "iteration_gains": [float(truth_gain(config, r.applied_yaw)) for r in state.records],
        "final_yaw_deg": np.asarray(final_yaw).tolist(),
        "final_gain": final_gain,
    }
    if config.oracle:
        oracle = plant_optimum(config)
        out["oracle_yaw_deg"] = oracle.yaw.tolist()
        out["oracle_gain"] = oracle.gain
        out["gain_fraction_of_oracle"] = final_gain / oracle.gain if oracle.gain > 0 else None
    return out


def write_artifacts(state: CampaignState, out_dir, snapshot: bool = True) -> None:
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "iterations.csv").write_text(iterations_csv(state))
    (out / "dataset.csv").write_text(dataset_csv(state))
    if snapshot:
        path = out / "models" / f"iteration_{state.iteration:03d}.json"
        path.write_text(json.dumps(state.model.to_dict()))
    state.save(out / CHECKPOINT)


@dataclass
class CampaignResult:
    state: CampaignState
    summary: dict = field(default_factory=dict)


def run_campaign(config: CampaignConfig | None = None, out_dir=None, resume=None,
                 stop_after: int | None = None) -> CampaignResult:
    """Run (or resume) a campaign.

    ``resume`` is a checkpoint path or a :class:`CampaignState`. When a config
    is given alongside it, the two must hash identically. ``stop_after``
    halts after that many total iterations, leaving a checkpoint to resume.
    A failing iteration re-raises after the last good checkpoint is written.
    """
    if resume is not None:
        state = resume if isinstance(resume, CampaignState) else CampaignState.load(resume)
        if config is not None and config.digest() != state.config_hash:
            raise ConfigError("configuration does not match the checkpoint")
        config = state.config
        plant = restore_plant(state)
    else:
        if config is None:
            raise ConfigError("need a configuration or a checkpoint")
        state, plant = initialize(config)
        if out_dir is not None:
            write_artifacts(state, out_dir)

    opts = config.build_optimizer_options()
    target = config.iterations if stop_after is None else min(stop_after, config.iterations)
    while state.iteration < target:
        try:
            advance(state, plant, opts)
        except Exception:
            if out_dir is not None:
                write_artifacts(state, out_dir, snapshot=False)
            raise
        if out_dir is not None:
            write_artifacts(state, out_dir)

    result = CampaignResult(state)
    if state.iteration >= config.iterations:
        result.summary = summarize(state)
        if out_dir is not None:
            Path(out_dir, "summary.json").write_text(json.dumps(result.summary, indent=2))
    return result


# -- comparison and plot data -------------------------------------------------------


_SCHEME_FIELDS = ("scheme", "kernel")


def compare_schemes(configs, out_dir=None) -> list[dict]:
    """Run each config and tabulate initialization, per-iteration and final gains."""
    configs = list(configs)
    if not configs:
        return []
    base = _strip(configs[0])
    for c in configs[1:]:
        if _strip(c) != base:
            raise ConfigError("compared configurations may differ only in scheme and kernel")
    rows = []
    for i, c in enumerate(configs):
        sub = None if out_dir is None else Path(out_dir, f"{i:02d}_{c.scheme}_{c.kernel}")
        res = run_campaign(c, sub)
        gains = [float(truth_gain(c, r.applied_yaw)) for r in res.state.records]
        rows.append({
            "scheme": c.scheme_enum.value,
            "kernel": c.kernel,
            "initialization_gain": gains[0] if gains else res.summary.get("best_initial_gain"),
            "iteration_gains": gains,
            "final_gain": res.summary["final_gain"],
            "final_yaw_deg": res.summary["final_yaw_deg"],
            "oracle_gain": res.summary.get("oracle_gain"),
        })
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        Path(out_dir, "comparison.csv").write_text(comparison_csv(rows))
    return rows


def _strip(config: CampaignConfig) -> dict:
    d = config.to_dict()
    for k in _SCHEME_FIELDS + ("output_dir",):
        d.pop(k)
    return d


def comparison_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n_iter = max((len(r["iteration_gains"]) for r in rows), default=0)
    n_t = max((len(r["final_yaw_deg"]) for r in rows), default=0)
    w.writerow(["scheme", "kernel", "initialization_gain"]
               + [f"gain_iteration_{k + 1}" for k in range(n_iter)]
               + ["final_gain"] + [f"final_yaw_{t}_deg" for t in range(n_t)])
    for r in rows:
        gains = r["iteration_gains"] + [float("nan")] * (n_iter - len(r["iteration_gains"]))
        init = r["initialization_gain"]
        w.writerow([r["scheme"], r["kernel"], _fmt(np.nan if init is None else init)]
                   + [_fmt(g) for g in gains] + [_fmt(r["final_gain"])]
                   + [_fmt(v) for v in r["final_yaw_deg"]])
    return buf.getvalue()


def export_row_slice(state: CampaignState, row: int, grid=None, path=None):
    """Model mean and 95 % bands of one row's normalized power along its tied yaw.

    The row's turbines share the swept yaw; all others stay at the current
    applied yaw. Returns ``(curve, scatter)`` dictionaries of arrays; the
    scatter holds training OPs projected onto the row (mean row yaw, mean
    row normalized power). With ``path`` the curve CSV is written there and
    the scatter next to it with a ``_training`` suffix.
    """
    model = state.model
    if model.n_train == 0:
        raise ValueError("the model has no training data")
    rows = state.config.build_layout().rows()
    if not 0 <= row < len(rows):
        raise ValueError(f"row index {row} out of range")
    members = rows[row]
    grid = np.linspace(-30.0, 30.0, 101) if grid is None else np.asarray(grid, dtype=float)
    yaw = np.tile(state.current_yaw, (len(grid), 1))
    yaw[:, members] = grid[:, None]
    means, latent = model.model_power(yaw)
    noise = np.array([h.noise_std ** 2 for h in model.hyperparameters()])
    m = len(members)
    mean = means[:, members].mean(axis=1)
    var_latent = latent[:, members].sum(axis=1) / m ** 2
    var_obs = (latent[:, members] + noise[members]).sum(axis=1) / m ** 2
    half_l = 1.96 * np.sqrt(var_latent)
    half_o = 1.96 * np.sqrt(var_obs)
    curve = {"yaw_deg": grid, "mean": mean, "model_lower": mean - half_l, "model_upper": mean + half_l,
             "total_lower": mean - half_o, "total_upper": mean + half_o}
    x_train = np.array([op.yaw for op in state.dataset])
    y_train = np.array([op.normalized for op in state.dataset])
    scatter = {"yaw_deg": x_train[:, members].mean(axis=1),
               "normalized": y_train[:, members].mean(axis=1)}
    if path is not None:
        path = Path(path)
        _write_columns(path, curve)
        _write_columns(path.with_name(path.stem + "_training" + path.suffix), scatter)
    return curve, scatter


def _write_columns(path: Path, columns: dict) -> None:
    keys = list(columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for vals in zip(*(columns[k] for k in keys)):
        w.writerow([_fmt(v) for v in vals])
    path.write_text(buf.getvalue())
