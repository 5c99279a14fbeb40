"""Closed-loop yaw optimisation: modifier adaptation with GPs (MA-GP) and BO.

MA-GP corrects each turbine's surrogate power with a GP trained on the
plant-model mismatch; BO trains the same GPs on the measured power directly.
Both share the optimizer, the input filter and the data assimilation step.
"""
from __future__ import annotations

import enum
import itertools
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from . import rng as rng_mod
from .farm import Ambient, FarmModel, farm_power
from .gp import GaussianProcess, GpFitError, GpNumericalError, Hyperparameters
from .plant import extract_measurement

logger = logging.getLogger(__name__)


class Scheme(str, enum.Enum):
    MAGP = "magp"
    BO = "bo"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("-", "").replace("_", "")
        if v in ("magp", "ma"):
            return cls.MAGP
        if v == "bo":
            return cls.BO
        raise ValueError(f"unknown scheme {value!r}")


class ObjectiveForm(str, enum.Enum):
    SQUARED = "squared"
    LINEAR = "linear"

    @classmethod
    def parse(cls, value) -> "ObjectiveForm":
        if isinstance(value, cls):
            return value
        v = str(value).lower()
        if v == "squared":
            return cls.SQUARED
        if v == "linear":
            return cls.LINEAR
        raise ValueError(f"unknown objective form {value!r}")


class Surrogate:
    """Farm model whose per-turbine output is divided by reference powers."""

    def __init__(self, model: FarmModel, reference):
        self.model = model
        self.reference = np.asarray(reference, dtype=float)
        if self.reference.shape != (model.n_turbines,) or np.any(self.reference <= 0):
            raise ValueError("reference powers must be positive, one per turbine")

    @property
    def n_turbines(self) -> int:
        return self.model.n_turbines

    def predict(self, yaw_deg) -> np.ndarray:
        return self.model.powers(yaw_deg) / self.reference

    def with_ambient(self, ambient: Ambient) -> "Surrogate":
        return Surrogate(self.model.with_ambient(ambient), self.reference)


class CorrectedModel:
    """Surrogate plus one GP per turbine (MA-GP), or the GPs alone (BO).

    Inputs are yaw vectors in degrees; outputs are per-turbine powers divided
    by the turbine's reference (greedy) power. ``weights`` convert those to the
    fraction of the reference farm total.

    ``input_groups`` lists turbine groups whose yaws are always tied; the GPs
    then see one input per group (the first member's yaw) instead of
    redundant copies.
    """

    def __init__(self, scheme, surrogate: Surrogate, gps: Sequence[GaussianProcess],
                 refit_options: dict | None = None, input_groups=None):
        self.scheme = Scheme.parse(scheme)
        self.surrogate = surrogate
        self.gps = list(gps)
        self.refit_options = dict(refit_options or {})
        self.input_groups = None if input_groups is None else \
            tuple(tuple(int(i) for i in g) for g in input_groups)
        if len(self.gps) != surrogate.n_turbines:
            raise ValueError("need one GP per turbine")

    @classmethod
    def empty(cls, scheme, surrogate: Surrogate, kernel="se", prior: Hyperparameters | None = None,
              input_groups=None, **gp_options) -> "CorrectedModel":
        n = surrogate.n_turbines
        d = n if input_groups is None else len(input_groups)
        if prior is None:
            prior = Hyperparameters(0.1, 0.01, (10.0,) * d)
        elif len(prior.length_scales) != d:
            prior = Hyperparameters(prior.signal_std, prior.noise_std, (prior.length_scales[0],) * d)
        gps = [GaussianProcess(kernel=kernel, hyperparameters=prior, optimize=False,
                               **gp_options).fit(np.zeros((0, d)), np.zeros(0))
               for _ in range(n)]
        opts = dict(gp_options, kernel=kernel)
        return cls(scheme, surrogate, gps, opts, input_groups)

    def gp_inputs(self, yaw_deg) -> np.ndarray:
        """Map yaw vectors (turbine order) to GP inputs."""
        yaw = np.atleast_2d(np.asarray(yaw_deg, dtype=float))
        if self.input_groups is None:
            return yaw
        return yaw[:, [g[0] for g in self.input_groups]]

    def _derive(self, gps) -> "CorrectedModel":
        return CorrectedModel(self.scheme, self.surrogate, gps, self.refit_options, self.input_groups)

    @property
    def n_turbines(self) -> int:
        return self.surrogate.n_turbines

    @property
    def weights(self) -> np.ndarray:
        ref = self.surrogate.reference
        return ref / ref.sum()

    @property
    def n_train(self) -> int:
        return self.gps[0].n_train

    def model_power(self, yaw_deg):
        """Per-turbine normalized means and latent variances, batched over rows."""
        yaw = np.atleast_2d(np.asarray(yaw_deg, dtype=float))
        means = np.empty(yaw.shape)
        var = np.empty(yaw.shape)
        x = self.gp_inputs(yaw)
        for t, gp in enumerate(self.gps):
            means[:, t], var[:, t], _ = gp.predict(x, return_var=True)
        if self.scheme is Scheme.MAGP:
            means = means + self.surrogate.predict(yaw)
        if np.ndim(yaw_deg) == 1:
            return means[0], var[0]
        return means, var

    __call__ = model_power

    def targets(self, yaw_deg, measured_normalized) -> np.ndarray:
        """GP training targets for measurements at ``yaw_deg``."""
        y = np.atleast_2d(np.asarray(measured_normalized, dtype=float))
        if self.scheme is Scheme.MAGP:
            return y - self.surrogate.predict(np.atleast_2d(yaw_deg))
        return y

    def assimilate(self, yaw_deg, measured_normalized, refit: bool = False, seed: int = 0):
        """Return a new model with the measurements appended to every GP."""
        yaw = np.atleast_2d(np.asarray(yaw_deg, dtype=float))
        y = self.targets(yaw, measured_normalized)
        if y.shape != yaw.shape:
            raise ValueError("measurement and yaw arrays disagree in shape")
        x = self.gp_inputs(yaw)
        gps = []
        for t, gp in enumerate(self.gps):
            new = gp.add_observation(x, y[:, t], refit=False)
            if refit:
                new = self._refit(new, rng_mod.derived_seed(seed, "gp", t))
            gps.append(new)
        return self._derive(gps)

    def _refit(self, gp: GaussianProcess, seed: int) -> GaussianProcess:
        opts = dict(self.refit_options)
        opts.pop("kernel", None)
        fresh = GaussianProcess(kernel=gp.kernel, optimize=True, random_state=seed, **opts)
        return fresh.fit(gp.X_train_, gp.y_train_)

    def refit(self, seed: int = 0) -> "CorrectedModel":
        gps = [self._refit(gp, rng_mod.derived_seed(seed, "gp", t)) for t, gp in enumerate(self.gps)]
        return self._derive(gps)

    # estimator-style aliases
    def fit(self, X, Y, seed: int = 0):
        return self.assimilate(X, Y, refit=True, seed=seed)

    def predict(self, X, return_var=False):
        means, var = self.model_power(X)
        return (means, var) if return_var else means

    def hyperparameters(self) -> list[Hyperparameters]:
        return [gp.hyperparameters_ for gp in self.gps]

    def to_dict(self) -> dict:
        groups = None if self.input_groups is None else [list(g) for g in self.input_groups]
        return {"scheme": self.scheme.value, "refit_options": _jsonable(self.refit_options),
                "input_groups": groups, "gps": [gp.to_dict() for gp in self.gps]}

    @classmethod
    def from_dict(cls, d, surrogate: Surrogate) -> "CorrectedModel":
        return cls(d["scheme"], surrogate, [GaussianProcess.from_dict(g) for g in d["gps"]],
                   d.get("refit_options"), d.get("input_groups"))


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, Hyperparameters):
            v = v.to_dict()
        out[k] = v
    return out


@dataclass(frozen=True)
class OptimizerOptions:
    """Yaw-optimisation settings.

    ``tie_groups`` lists turbine index groups that share one yaw variable
    (e.g. the rows of the farm); ``None`` optimises every turbine freely.
    ``grid_resolution`` of ``None`` picks 1 deg for at most three free
    variables and 3 deg otherwise; grids larger than ``max_grid_nodes`` are
    replaced by a Latin-hypercube sample of that size.
    """

    yaw_lower: tuple[float, ...]
    yaw_upper: tuple[float, ...]
    variance_weight: float = 0.0
    objective_form: ObjectiveForm = ObjectiveForm.SQUARED
    filter_gain: float = 1.0
    n_starts: int = 16
    grid_resolution: float | None = None
    tie_groups: tuple[tuple[int, ...], ...] | None = None
    max_grid_nodes: int = 100_000
    tie_rtol: float = 1e-8

    def __post_init__(self):
        lo = tuple(float(v) for v in self.yaw_lower)
        hi = tuple(float(v) for v in self.yaw_upper)
        object.__setattr__(self, "yaw_lower", lo)
        object.__setattr__(self, "yaw_upper", hi)
        object.__setattr__(self, "objective_form", ObjectiveForm.parse(self.objective_form))
        if self.tie_groups is not None:
            object.__setattr__(self, "tie_groups", tuple(tuple(int(i) for i in g)
                                                         for g in self.tie_groups))
        if len(lo) != len(hi):
            raise ValueError("yaw bound vectors differ in length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError("lower yaw bound exceeds upper bound")
        if not 0.0 <= self.filter_gain <= 1.0:
            raise ValueError("filter gain must lie in [0, 1]")
        if self.variance_weight < 0:
            raise ValueError("variance weight must be non-negative")
        if self.n_starts < 0:
            raise ValueError("number of starts must be non-negative")

    @property
    def n_turbines(self) -> int:
        return len(self.yaw_lower)

    def groups(self) -> list[list[int]]:
        if self.tie_groups is None:
            return [[i] for i in range(self.n_turbines)]
        return [list(g) for g in self.tie_groups]

    def free_bounds(self):
        lo = np.array(self.yaw_lower)
        hi = np.array(self.yaw_upper)
        groups = self.groups()
        zl = np.array([lo[g].max() for g in groups])
        zu = np.array([hi[g].min() for g in groups])
        if np.any(zl > zu):
            raise ValueError("tied turbines have incompatible yaw bounds")
        return zl, zu

    def expand(self, z) -> np.ndarray:
        """Map free variables (shape ``(..., n_groups)``) to yaw vectors."""
        z = np.asarray(z, dtype=float)
        out = np.empty(z.shape[:-1] + (self.n_turbines,))
        for k, g in enumerate(self.groups()):
            out[..., g] = z[..., k:k + 1]
        return out


def objective(means, variances, opts: OptimizerOptions | None = None, weights=None,
              variance_weight: float | None = None, form=None):
    """Scalar objective of per-turbine means and variances (last axis).

    The squared form is ``total**2 - weight * spread``, the linear form
    ``total - weight * sqrt(spread)``. ``total`` is the (weighted) sum of
    means and ``spread`` the (squared-weight) sum of variances.
    """
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if means.shape != variances.shape:
        raise ValueError("means and variances differ in shape")
    penalty = (opts.variance_weight if opts is not None else 0.0) if variance_weight is None \
        else variance_weight
    form = ObjectiveForm.parse(form if form is not None else
                               (opts.objective_form if opts is not None else "squared"))
    if weights is None:
        total = means.sum(-1)
        spread = variances.sum(-1)
    else:
        w = np.asarray(weights, dtype=float)
        total = (means * w).sum(-1)
        spread = (variances * w * w).sum(-1)
    if form is ObjectiveForm.SQUARED:
        return total ** 2 - penalty * spread
    return total - penalty * np.sqrt(np.maximum(spread, 0.0))


@dataclass
class YawProposal:
    yaw: np.ndarray
    value: float
    converged: bool
    n_evaluations: int
    grid_best: np.ndarray = field(default=None)
    grid_best_value: float = -np.inf


def _evaluator(model, opts: OptimizerOptions, weights):
    power = model.model_power if hasattr(model, "model_power") else model
    if weights is None:
        weights = getattr(model, "weights", None)
    counter = [0]

    def f(z):
        yaw = opts.expand(np.atleast_2d(z))
        counter[0] += len(yaw)
        means, var = power(yaw)
        return objective(np.atleast_2d(means), np.atleast_2d(var), opts, weights)

    return f, counter


def _grid(zl, zu, resolution):
    axes = []
    for a, b in zip(zl, zu):
        n = int(np.floor((b - a) / resolution + 1e-9)) + 1
        ax = a + resolution * np.arange(n)
        if b - ax[-1] > 1e-9:
            ax = np.append(ax, b)
        axes.append(ax)
    return axes


def _select(values, points, rtol):
    """Index of the best value; near-ties go to the largest total yaw, then lowest index."""
    values = np.asarray(values)
    best = np.max(values)
    tol = rtol * max(1.0, abs(best))
    near = np.flatnonzero(values >= best - tol)
    sums = points[near].sum(axis=1)
    return int(near[np.argmax(sums)])


def optimize_yaw(model, opts: OptimizerOptions, seed: int = 0, weights=None) -> YawProposal:
    """Maximise the objective over the yaw box.

    ``model`` is a :class:`CorrectedModel` or any callable mapping a batch of
    yaw vectors to ``(means, variances)``. A full grid (or Latin-hypercube
    sample) is always evaluated; L-BFGS-B with central-difference gradients
    then polishes from the best grid nodes, the box corners and
    Latin-hypercube starts.
    """
    f, counter = _evaluator(model, opts, weights)
    zl, zu = opts.free_bounds()
    dim = len(zl)
    free = zu > zl
    gen = rng_mod.stream(seed, "optimizer")

    if not np.any(free):
        z = zl.copy()
        v = float(f(z)[0])
        return YawProposal(opts.expand(z), v, True, counter[0], opts.expand(z), v)

    resolution = opts.grid_resolution or (1.0 if free.sum() <= 3 else 3.0)
    axes = _grid(zl, zu, resolution)
    n_nodes = int(np.prod([len(a) for a in axes], dtype=float))
    if n_nodes <= opts.max_grid_nodes:
        nodes = np.array(list(itertools.product(*axes))) if dim <= 1 else \
            np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, dim)
    else:
        sampler = qmc.LatinHypercube(d=dim, seed=gen)
        nodes = qmc.scale(sampler.random(opts.max_grid_nodes), zl, np.where(free, zu, zl + 1e-12))
        nodes = np.where(free, nodes, zl)
    values = np.concatenate([f(chunk) for chunk in np.array_split(nodes, max(1, len(nodes) // 20000))])
    g_idx = _select(values, nodes, opts.tie_rtol)
    grid_best, grid_best_value = nodes[g_idx].copy(), float(values[g_idx])

    starts = []
    order = np.argsort(-values, kind="stable")
    starts.extend(nodes[i] for i in order[:4])
    if 2 ** dim <= max(opts.n_starts // 2, 1):
        starts.extend(np.array(c) for c in itertools.product(*zip(zl, zu)))
    n_lhs = max(opts.n_starts - len(starts), 0)
    if n_lhs:
        sampler = qmc.LatinHypercube(d=dim, seed=gen)
        starts.extend(qmc.scale(sampler.random(n_lhs), zl, np.where(free, zu, zl + 1e-12)))
    starts = [np.clip(s, zl, zu) for s in starts]

    h = 1e-4 * max(resolution, 1.0)
    eye = np.eye(dim)

    def neg_with_grad(z):
        pts = np.vstack([z, z + h * eye, z - h * eye])
        hi_ok = z + h <= zu
        lo_ok = z - h >= zl
        pts[1:dim + 1] = np.minimum(pts[1:dim + 1], zu)
        pts[dim + 1:] = np.maximum(pts[dim + 1:], zl)
        v = f(pts)
        step = np.where(hi_ok, h, 0.0) + np.where(lo_ok, h, 0.0)
        step = np.where(step > 0, step, 1.0)
        grad = (v[1:dim + 1] - v[dim + 1:]) / step
        grad = np.where(free, grad, 0.0)
        return -float(v[0]), -grad

    cand_pts = [grid_best]
    cand_vals = [grid_best_value]
    converged = True
    for s in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = minimize(neg_with_grad, s, jac=True, method="L-BFGS-B",
                           bounds=list(zip(zl, zu)), options={"maxiter": 200})
        z = np.clip(res.x, zl, zu)
        v = float(f(z)[0])
        if not res.success and res.status != 0:
            converged = converged and v <= grid_best_value
        cand_pts.append(z)
        cand_vals.append(v)
    cand_pts = np.array(cand_pts)
    k = _select(cand_vals, cand_pts, opts.tie_rtol)
    if not np.isfinite(cand_vals[k]):
        converged = False
    return YawProposal(opts.expand(cand_pts[k]), float(cand_vals[k]), converged, counter[0],
                       opts.expand(grid_best), grid_best_value)


def filter_step(current, proposal, gain: float) -> np.ndarray:
    """Move ``gain`` of the way from ``current`` to ``proposal``."""
    if not 0.0 <= gain <= 1.0:
        raise ValueError("filter gain must lie in [0, 1]")
    current = np.asarray(current, dtype=float)
    proposal = np.asarray(proposal, dtype=float)
    out = current + gain * (proposal - current)
    lo = np.minimum(current, proposal)
    hi = np.maximum(current, proposal)
    return np.clip(out, lo, hi)


@dataclass(frozen=True)
class AmbientEstimate:
    wind_speed: float
    turbulence_intensity: float
    residual: float


def estimate_ambient(model: FarmModel, greedy_measurements, wind_speed_range=(6.0, 10.0),
                     ti_range=(0.02, 0.15)) -> AmbientEstimate:
    """Least-squares fit of free-stream speed and turbulence intensity to greedy powers.

    Coarse 0.1 m/s x 0.5 % grid, then a 0.01 m/s x 0.1 % refinement around the
    coarse optimum.
    """
    meas = np.asarray(greedy_measurements, dtype=float)
    if meas.shape != (model.n_turbines,):
        raise ValueError("need one greedy measurement per turbine")
    (u_lo, u_hi), (i_lo, i_hi) = wind_speed_range, ti_range
    if not (u_hi >= u_lo > 0 and i_hi >= i_lo > 0):
        raise ValueError("empty or invalid search range")
    scale = max(meas.max(), 1.0)
    zero = np.zeros(model.n_turbines)

    def residuals(us, tis):
        U, I = np.meshgrid(us, tis, indexing="ij")
        U, I = U.ravel(), I.ravel()
        p, _ = farm_power(model.layout, model.ambient, np.broadcast_to(zero, (len(U), len(zero))),
                          model.params, wind_speed=U, turbulence_intensity=I)
        r = (((p - meas) / scale) ** 2).sum(-1)
        return U, I, r

    def axis(lo, hi, step):
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        return np.round(lo + step * np.arange(n), 10)

    U, I, r = residuals(axis(u_lo, u_hi, 0.1), axis(i_lo, i_hi, 0.005))
    k = int(np.argmin(r))
    u0, i0 = U[k], I[k]
    us = axis(max(u_lo, u0 - 0.1), min(u_hi, u0 + 0.1), 0.01)
    tis = axis(max(i_lo, i0 - 0.005), min(i_hi, i0 + 0.005), 0.001)
    U, I, r = residuals(us, tis)
    k = int(np.argmin(r))
    return AmbientEstimate(float(U[k]), float(I[k]), float(r[k] * scale ** 2))


@dataclass
class IterationRecord:
    iteration: int
    proposed_yaw: np.ndarray
    applied_yaw: np.ndarray
    measured_powers: np.ndarray
    measured_normalized: np.ndarray
    predicted_normalized: np.ndarray
    objective_value: float
    hyperparameters: list
    truth_total_normalized: float = float("nan")
    optimizer_converged: bool = True

    @property
    def normalized_total(self) -> float:
        return float(self.measured_powers.sum() / self._reference_total)

    _reference_total: float = 1.0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "proposed_yaw": self.proposed_yaw.tolist(),
            "applied_yaw": self.applied_yaw.tolist(),
            "measured_powers": self.measured_powers.tolist(),
            "measured_normalized": self.measured_normalized.tolist(),
            "predicted_normalized": self.predicted_normalized.tolist(),
            "objective_value": self.objective_value,
            "hyperparameters": [h.to_dict() for h in self.hyperparameters],
            "truth_total_normalized": self.truth_total_normalized,
            "optimizer_converged": self.optimizer_converged,
            "reference_total": self._reference_total,
        }

    @classmethod
    def from_dict(cls, d) -> "IterationRecord":
        return cls(d["iteration"], np.array(d["proposed_yaw"]), np.array(d["applied_yaw"]),
                   np.array(d["measured_powers"]), np.array(d["measured_normalized"]),
                   np.array(d["predicted_normalized"]), d["objective_value"],
                   [Hyperparameters.from_dict(h) for h in d["hyperparameters"]],
                   d["truth_total_normalized"], d["optimizer_converged"], d["reference_total"])


@dataclass
class LoopState:
    """Mutable loop state advanced by :func:`run_iteration`."""

    model: CorrectedModel
    current_yaw: np.ndarray
    reference: np.ndarray
    seed: int = 0
    iteration: int = 0
    refit: bool = True
    duration: float = 600.0
    horizon: float = 300.0
    cut: float = 300.0
    records: list = field(default_factory=list)


def run_iteration(state: LoopState, plant, opts: OptimizerOptions) -> IterationRecord:
    """Optimise, filter, apply to the plant, measure and assimilate.

    ``state`` is only updated after every step succeeded.
    """
    k = state.iteration + 1
    proposal = optimize_yaw(state.model, opts, seed=rng_mod.derived_seed(state.seed, "opt", k))
    if not proposal.converged:
        logger.warning("iteration %d: yaw optimizer did not converge; using best point", k)
    applied = filter_step(state.current_yaw, proposal.yaw, opts.filter_gain)
    applied = np.clip(applied, opts.yaw_lower, opts.yaw_upper)
    predicted, _ = state.model.model_power(applied)

    plant_snapshot = plant.get_state()
    try:
        segment = plant.simulate_op(applied, state.duration)
        measured = extract_measurement(segment, state.horizon, state.cut)
        normalized = measured / state.reference
        new_model = state.model.assimilate(applied, normalized, refit=state.refit,
                                           seed=rng_mod.derived_seed(state.seed, "fit", k))
    except (GpFitError, GpNumericalError, ValueError):
        plant.set_state(plant_snapshot)
        raise

    truth = getattr(plant, "steady_power", None)
    truth_total = float(truth(applied).sum() / state.reference.sum()) if truth else float("nan")
    record = IterationRecord(k, proposal.yaw, applied, measured, normalized, predicted,
                             proposal.value, new_model.hyperparameters(), truth_total,
                             proposal.converged, float(state.reference.sum()))
    state.model = new_model
    state.current_yaw = applied
    state.iteration = k
    state.records.append(record)
    return record
