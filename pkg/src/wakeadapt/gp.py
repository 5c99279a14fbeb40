"""Exact Gaussian-process regression with ARD kernels.

Zero prior mean, squared-exponential or Matern 5/2 covariance with one length
scale per input dimension, hyperparameters fitted by maximising the log
marginal likelihood with multi-restart L-BFGS-B in log space.

Hyperparameters are always reported in physical units (output units for the
signal and noise standard deviations, input units for the length scales).
Internally the inputs are standardised and the targets divided by their RMS;
this only conditions the numerics and never changes a prediction.
"""
from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_random_state

logger = logging.getLogger(__name__)

_SQRT5 = np.sqrt(5.0)
_JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class KernelKind(str, enum.Enum):
    SE = "se"
    MATERN52 = "matern52"

    @classmethod
    def parse(cls, value) -> "KernelKind":
        if isinstance(value, cls):
            return value
        aliases = {"se": cls.SE, "squared_exponential": cls.SE, "sqexp": cls.SE, "rbf": cls.SE,
                   "matern52": cls.MATERN52, "m52": cls.MATERN52, "matern": cls.MATERN52}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown kernel kind {value!r}") from None


class GpNumericalError(ArithmeticError):
    """Cholesky factorisation failed even after jitter escalation."""


class GpFitError(RuntimeError):
    """No hyperparameter restart converged; ``best`` holds the best-effort values."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class Hyperparameters:
    signal_std: float
    noise_std: float
    length_scales: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "length_scales", tuple(float(v) for v in self.length_scales))
        values = (self.signal_std, self.noise_std) + self.length_scales
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise ValueError(f"hyperparameters must be finite and positive: {values}")

    @property
    def n_dims(self) -> int:
        return len(self.length_scales)

    def to_log(self) -> np.ndarray:
        return np.log(np.r_[self.signal_std, self.noise_std, self.length_scales])

    @classmethod
    def from_log(cls, theta) -> "Hyperparameters":
        v = np.exp(np.asarray(theta, dtype=float))
        return cls(float(v[0]), float(v[1]), tuple(v[2:]))

    def to_dict(self) -> dict:
        return {"signal_std": self.signal_std, "noise_std": self.noise_std,
                "length_scales": list(self.length_scales)}

    @classmethod
    def from_dict(cls, d) -> "Hyperparameters":
        return cls(d["signal_std"], d["noise_std"], tuple(d["length_scales"]))


def _sq_dist(a, b, length_scales):
    a = np.asarray(a, dtype=float) / length_scales
    b = np.asarray(b, dtype=float) / length_scales
    d = (a * a).sum(-1)[:, None] + (b * b).sum(-1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _kernel_from_sq(kind, sq, signal_var):
    if kind is KernelKind.SE:
        return signal_var * np.exp(-0.5 * sq)
    r = np.sqrt(5.0 * sq)
    return signal_var * (1.0 + r + 5.0 / 3.0 * sq) * np.exp(-r)


def kernel_eval(kind, hyper: Hyperparameters, u_i, u_j) -> float:
    """Covariance between two input vectors."""
    kind = KernelKind.parse(kind)
    u_i = np.atleast_1d(np.asarray(u_i, dtype=float))
    u_j = np.atleast_1d(np.asarray(u_j, dtype=float))
    if u_i.shape != (hyper.n_dims,) or u_j.shape != (hyper.n_dims,):
        raise ValueError("input dimension does not match the number of length scales")
    scaled = (u_i - u_j) / np.asarray(hyper.length_scales)
    sq = float(scaled @ scaled)
    return float(_kernel_from_sq(kind, sq, hyper.signal_std ** 2))


def cross_covariance(kind, hyper: Hyperparameters, a, b) -> np.ndarray:
    kind = KernelKind.parse(kind)
    ls = np.asarray(hyper.length_scales)
    return _kernel_from_sq(kind, _sq_dist(np.atleast_2d(a), np.atleast_2d(b), ls),
                           hyper.signal_std ** 2)


def gram(kind, hyper: Hyperparameters, inputs) -> np.ndarray:
    """Noise-free covariance matrix of ``inputs`` (shape ``(n, d)``)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != hyper.n_dims:
        raise ValueError("input dimension does not match the number of length scales")
    k = cross_covariance(kind, hyper, inputs, inputs)
    k = 0.5 * (k + k.T)
    np.fill_diagonal(k, hyper.signal_std ** 2)
    return k


def factorize(k_noisy, signal_var):
    """Lower Cholesky factor of ``k_noisy`` with escalating diagonal jitter.

    Returns ``(L, jitter)``.
    """
    n = k_noisy.shape[0]
    for rel in _JITTER_LADDER:
        jitter = rel * signal_var
        try:
            return cholesky(k_noisy + jitter * np.eye(n), lower=True), jitter
        except np.linalg.LinAlgError:
            continue
    cond = np.linalg.cond(k_noisy)
    raise GpNumericalError(f"Cholesky failed after jitter {_JITTER_LADDER[-1]:g}*sigma_f^2; "
                           f"condition number {cond:.3e}, n={n}")


def _lml_internal(kind, theta, x, y, eval_gradient=False):
    """Log marginal likelihood (and gradient w.r.t. log-hyperparameters) on given arrays."""
    theta = np.asarray(theta, dtype=float)
    sf2 = np.exp(2.0 * theta[0])
    sn2 = np.exp(2.0 * theta[1])
    ls = np.exp(theta[2:])
    n, d = x.shape
    sq_parts = ((x[:, None, :] - x[None, :, :]) / ls) ** 2
    sq = sq_parts.sum(-1)
    if kind is KernelKind.SE:
        kf = sf2 * np.exp(-0.5 * sq)
    else:
        r = np.sqrt(5.0 * sq)
        kf = sf2 * (1.0 + r + 5.0 / 3.0 * sq) * np.exp(-r)
    k = kf + sn2 * np.eye(n)
    L, _ = factorize(k, sf2)
    alpha = cho_solve((L, True), y)
    value = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2.0 * np.pi)
    if not eval_gradient:
        return value
    inner = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    grad = np.empty(theta.shape)
    grad[0] = 0.5 * np.sum(inner * 2.0 * kf)
    grad[1] = 0.5 * np.trace(inner) * 2.0 * sn2
    if kind is KernelKind.SE:
        base = kf
    else:
        r = np.sqrt(5.0 * sq)
        base = sf2 * 5.0 / 3.0 * (1.0 + r) * np.exp(-r)
    for p in range(d):
        grad[2 + p] = 0.5 * np.sum(inner * base * sq_parts[:, :, p])
    return value, grad


@dataclass(frozen=True)
class Normalization:
    """Affine input standardisation and target scaling (no target shift)."""

    x_shift: tuple[float, ...]
    x_scale: tuple[float, ...]
    y_scale: float

    @classmethod
    def from_data(cls, x, y) -> "Normalization":
        x = np.atleast_2d(x)
        if x.shape[0] == 0:
            return cls(tuple(np.zeros(x.shape[1])), tuple(np.ones(x.shape[1])), 1.0)
        scale = x.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
        y_scale = float(np.sqrt(np.mean(np.square(y)))) if len(y) else 1.0
        if not y_scale > 1e-300:
            y_scale = 1.0
        return cls(tuple(x.mean(axis=0)), tuple(scale), y_scale)

    def x(self, x):
        return (np.asarray(x, dtype=float) - np.asarray(self.x_shift)) / np.asarray(self.x_scale)

    def theta_to_internal(self, theta):
        theta = np.array(theta, dtype=float)
        theta[:2] -= np.log(self.y_scale)
        theta[2:] -= np.log(self.x_scale)
        return theta

    def theta_to_physical(self, theta):
        theta = np.array(theta, dtype=float)
        theta[:2] += np.log(self.y_scale)
        theta[2:] += np.log(self.x_scale)
        return theta

    def to_dict(self):
        return {"x_shift": list(self.x_shift), "x_scale": list(self.x_scale), "y_scale": self.y_scale}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["x_shift"]), tuple(d["x_scale"]), d["y_scale"])


class GaussianProcess(RegressorMixin, BaseEstimator):
    """Zero-mean exact GP regressor with ARD kernel.

    Parameters
    ----------
    kernel : {"se", "matern52"}
        Covariance function.
    hyperparameters : Hyperparameters, optional
        Starting point of the first restart, and the values used as-is when
        ``optimize=False``. Defaults to unit signal, noise 0.1 and length
        scales equal to the input standard deviations.
    optimize : bool
        Maximise the log marginal likelihood in ``fit``.
    bounded : bool
        Enforce the lower bounds below. When False only a tiny numerical
        floor (1e-6 of the data scale) remains.
    noise_lower : float, optional
        Lower bound on the noise standard deviation in output units.
        Defaults to 1e-3 of the target RMS.
    length_scale_lower : float
        Lower bound on every length scale in input units.
    n_restarts : int
        Number of optimizer starts; the first uses ``hyperparameters`` (or the
        default), the rest log-uniform draws.
    random_state : int or None
        Seed for the restart draws.
    """

    def __init__(self, kernel="se", hyperparameters=None, optimize=True, bounded=True,
                 noise_lower=None, length_scale_lower=1.0, n_restarts=8, random_state=None):
        self.kernel = kernel
        self.hyperparameters = hyperparameters
        self.optimize = optimize
        self.bounded = bounded
        self.noise_lower = noise_lower
        self.length_scale_lower = length_scale_lower
        self.n_restarts = n_restarts
        self.random_state = random_state

    # -- fitting -----------------------------------------------------------------

    def _default_hyper(self, norm: Normalization, d: int) -> Hyperparameters:
        return Hyperparameters(norm.y_scale, 0.1 * norm.y_scale, tuple(norm.x_scale[:d]))

    def _log_bounds(self, norm: Normalization, d: int):
        """Bounds on internal log-hyperparameters."""
        floor = np.log(1e-6)
        lower = np.full(2 + d, floor)
        if self.bounded:
            noise_lo = (1e-3 * norm.y_scale if self.noise_lower is None else self.noise_lower)
            lower[1] = max(floor, np.log(noise_lo / norm.y_scale))
            lower[2:] = np.maximum(floor, np.log(self.length_scale_lower / np.asarray(norm.x_scale)))
        upper = np.r_[np.log(1e3), np.log(10.0), np.full(d, np.log(1e3))]
        upper = np.maximum(upper, lower)
        return lower, upper

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have different numbers of rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite training data")
        self.kernel_kind_ = KernelKind.parse(self.kernel)
        self.n_features_in_ = X.shape[1]
        self.normalization_ = Normalization.from_data(X, y)
        hyper = self.hyperparameters
        if hyper is None:
            hyper = self._default_hyper(self.normalization_, X.shape[1])
        if hyper.n_dims != X.shape[1]:
            raise ValueError("hyperparameter dimension does not match inputs")
        self.X_train_ = X.copy()
        self.y_train_ = y.copy()
        self.restart_results_ = []
        if self.optimize and len(y) > 0:
            hyper = self._optimize(hyper)
        self._set_hyper(hyper)
        return self

    def _optimize(self, start: Hyperparameters) -> Hyperparameters:
        norm = self.normalization_
        d = self.n_features_in_
        xn = norm.x(self.X_train_)
        yn = self.y_train_ / norm.y_scale
        lower, upper = self._log_bounds(norm, d)
        rng = check_random_state(self.random_state)
        kind = self.kernel_kind_

        def neg(theta):
            try:
                v, g = _lml_internal(kind, theta, xn, yn, eval_gradient=True)
            except GpNumericalError:
                return np.inf, np.zeros_like(theta)
            return -v, -g

        draw_lo = np.maximum(lower, np.r_[np.log(0.1), np.log(1e-2), np.full(d, np.log(0.1))])
        draw_hi = np.minimum(upper, np.r_[np.log(10.0), np.log(1.0), np.full(d, np.log(10.0))])
        draw_hi = np.maximum(draw_hi, draw_lo)
        starts = [np.clip(norm.theta_to_internal(start.to_log()), lower, upper)]
        for _ in range(max(self.n_restarts, 1) - 1):
            starts.append(rng.uniform(draw_lo, draw_hi))

        best_val, best_theta = -np.inf, None
        for idx, theta0 in enumerate(starts):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = minimize(neg, theta0, jac=True, method="L-BFGS-B",
                               bounds=list(zip(lower, upper)))
            val = -res.fun
            self.restart_results_.append((idx, float(val), np.array(res.x), bool(res.success)))
            if np.isfinite(val) and val > best_val:
                best_val, best_theta = val, res.x
        if best_theta is None:
            raise GpFitError("all hyperparameter restarts failed", best=start)
        hyper = Hyperparameters.from_log(norm.theta_to_physical(best_theta))
        return self._snap_to_bounds(hyper)

    def _snap_to_bounds(self, hyper: Hyperparameters) -> Hyperparameters:
        """Clamp values that sit on an active lower bound to the exact bound."""
        if not self.bounded:
            return hyper
        norm = self.normalization_
        noise_lo = 1e-3 * norm.y_scale if self.noise_lower is None else self.noise_lower
        noise = hyper.noise_std
        if noise <= noise_lo * (1 + 1e-9):
            noise = float(noise_lo)
        ls = tuple(float(self.length_scale_lower) if v <= self.length_scale_lower * (1 + 1e-9) else v
                   for v in hyper.length_scales)
        return Hyperparameters(hyper.signal_std, noise, ls)

    def _set_hyper(self, hyper: Hyperparameters):
        self.hyperparameters_ = hyper
        norm = self.normalization_
        n = len(self.y_train_)
        if n == 0:
            self.L_ = np.zeros((0, 0))
            self.alpha_ = np.zeros(0)
            self.jitter_ = 0.0
            self.log_marginal_likelihood_value_ = 0.0
            return
        theta = norm.theta_to_internal(hyper.to_log())
        xn = norm.x(self.X_train_)
        yn = self.y_train_ / norm.y_scale
        ih = Hyperparameters.from_log(theta)
        k = gram(self.kernel_kind_, ih, xn) + ih.noise_std ** 2 * np.eye(n)
        self.L_, self.jitter_ = factorize(k, ih.signal_std ** 2)
        self.alpha_ = cho_solve((self.L_, True), yn)
        self.log_marginal_likelihood_value_ = float(
            -0.5 * yn @ self.alpha_ - np.log(np.diag(self.L_)).sum()
            - 0.5 * n * np.log(2 * np.pi) - n * np.log(norm.y_scale))

    # -- inference ---------------------------------------------------------------

    def _prior_hyper(self, d):
        if hasattr(self, "hyperparameters_"):
            return self.hyperparameters_
        if self.hyperparameters is not None:
            return self.hyperparameters
        return Hyperparameters(1.0, 0.1, (1.0,) * d)

    def predict(self, X, return_var=False):
        """Posterior mean, optionally with latent and observation variances.

        Before ``fit`` (or with no training data) this is the zero-mean prior.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        hyper = self._prior_hyper(X.shape[1])
        if X.shape[1] != hyper.n_dims:
            raise ValueError("query dimension does not match the model")
        n = len(getattr(self, "y_train_", ()))
        sf2 = hyper.signal_std ** 2
        if n == 0:
            mean = np.zeros(len(X))
            latent = np.full(len(X), sf2)
        else:
            norm = self.normalization_
            ih = Hyperparameters.from_log(norm.theta_to_internal(hyper.to_log()))
            ks = cross_covariance(self.kernel_kind_, ih, norm.x(X), norm.x(self.X_train_))
            mean = ks @ self.alpha_ * norm.y_scale
            v = solve_triangular(self.L_, ks.T, lower=True)
            latent = (ih.signal_std ** 2 - np.einsum("ij,ij->j", v, v)) * norm.y_scale ** 2
            latent = np.clip(latent, 0.0, sf2)
        if not return_var:
            return mean
        return mean, latent, latent + hyper.noise_std ** 2

    def log_marginal_likelihood(self, theta=None, eval_gradient=False):
        """LML of the training data at log-hyperparameters ``theta`` (physical units).

        The gradient is taken with respect to ``theta``.
        """
        if theta is None:
            theta = self.hyperparameters_.to_log()
        norm = self.normalization_
        n = len(self.y_train_)
        out = _lml_internal(self.kernel_kind_, norm.theta_to_internal(theta),
                            norm.x(self.X_train_), self.y_train_ / norm.y_scale, eval_gradient)
        shift = n * np.log(norm.y_scale)
        if eval_gradient:
            return out[0] - shift, out[1]
        return out - shift

    def add_observation(self, u, y, refit=False):
        """Return a new model with ``(u, y)`` appended; hyperparameters kept unless ``refit``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        d = self._prior_hyper(u.shape[1]).n_dims
        if u.shape[1] != d:
            raise ValueError("observation dimension does not match the model")
        X_old = getattr(self, "X_train_", np.zeros((0, d)))
        y_old = getattr(self, "y_train_", np.zeros(0))
        X = np.vstack([X_old, u])
        Y = np.concatenate([y_old, y])
        params = self.get_params()
        if not refit:
            params.update(hyperparameters=self._prior_hyper(d), optimize=False)
        return type(self)(**params).fit(X, Y)

    @property
    def n_train(self) -> int:
        return len(getattr(self, "y_train_", ()))

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        params = self.get_params()
        if params["hyperparameters"] is not None:
            params["hyperparameters"] = params["hyperparameters"].to_dict()
        if isinstance(params["random_state"], np.random.RandomState):
            params["random_state"] = None
        params["kernel"] = KernelKind.parse(params["kernel"]).value
        out = {"params": params}
        if hasattr(self, "hyperparameters_"):
            out["fitted"] = {
                "hyperparameters": self.hyperparameters_.to_dict(),
                "normalization": self.normalization_.to_dict(),
                "X": self.X_train_.tolist(),
                "y": self.y_train_.tolist(),
            }
        return out

    @classmethod
    def from_dict(cls, d) -> "GaussianProcess":
        params = dict(d["params"])
        if params.get("hyperparameters") is not None:
            params["hyperparameters"] = Hyperparameters.from_dict(params["hyperparameters"])
        gp = cls(**params)
        fitted = d.get("fitted")
        if fitted is not None:
            X = np.array(fitted["X"], dtype=float).reshape(len(fitted["y"]), -1)
            if X.shape[0] == 0:
                X = np.zeros((0, len(fitted["hyperparameters"]["length_scales"])))
            gp.kernel_kind_ = KernelKind.parse(gp.kernel)
            gp.n_features_in_ = X.shape[1]
            gp.X_train_ = X
            gp.y_train_ = np.array(fitted["y"], dtype=float)
            gp.normalization_ = Normalization.from_dict(fitted["normalization"])
            gp.restart_results_ = []
            gp._set_hyper(Hyperparameters.from_dict(fitted["hyperparameters"]))
        return gp
