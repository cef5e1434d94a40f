"""Gradient-based objective W, the GIC/CGIC sample criteria and score checks.

Every model family exposes the gradient and Laplacian of its log unnormalized
density with respect to the *differentiated variable* (the observation for
IID data, the response for regressions, the current value for Markov data).
Nothing here ever touches a normalizing constant.

Models work on *batches*: a tuple whose first element is the differentiated
variable (shape ``(m,)`` or ``(m, d)``) and whose remaining elements are fixed
covariates (predictors, lag matrices) aligned row by row.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

KINDS = ("unconditional", "regression", "timeseries")


class ModelError(ValueError):
    """Invalid model, parameter vector or contract violation."""


class EvaluationError(ModelError):
    """A score or Laplacian evaluated to a non-finite number."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class WindowError(ModelError):
    """Truncation window leaves no observations to average over."""


@dataclass(frozen=True)
class Dataset:
    """Observations for one of the three supported data kinds.

    unconditional: array ``(n,)`` or ``(n, d)``;
    regression: array ``(n, 2)`` of (predictor, response) pairs;
    timeseries: ordered array ``(N,)``.
    """

    kind: str
    observations: np.ndarray
    meta: dict | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        obs = np.asarray(self.observations, dtype=float)
        if self.kind == "timeseries" and obs.ndim != 1:
            raise ValueError("timeseries observations must be one-dimensional")
        if self.kind == "regression" and (obs.ndim != 2 or obs.shape[1] != 2):
            raise ValueError("regression observations must have shape (n, 2)")
        if obs.shape[0] < 1:
            raise ValueError("dataset is empty")
        object.__setattr__(self, "observations", obs)

    @property
    def n_raw(self) -> int:
        return int(self.observations.shape[0])

    @classmethod
    def unconditional(cls, values, **meta) -> "Dataset":
        return cls("unconditional", np.asarray(values, dtype=float), meta or None)

    @classmethod
    def regression(cls, x, y, **meta) -> "Dataset":
        return cls("regression", np.column_stack([np.asarray(x, float), np.asarray(y, float)]), meta or None)

    @classmethod
    def timeseries(cls, values, **meta) -> "Dataset":
        return cls("timeseries", np.asarray(values, dtype=float), meta or None)


@dataclass(frozen=True)
class WEvaluation:
    w: float
    grad_norm_sq: float
    laplacian: float


@dataclass(frozen=True)
class GicValue:
    value: float
    n_effective: int
    truncation_l: int = 0

    @property
    def n_raw(self) -> int:
        return self.n_effective + self.truncation_l


class ScoreModel:
    """Base class for families with analytic data scores.

    Subclasses set ``name``, ``param_names``, ``obs_dim``, ``kind`` and
    ``constraints`` and implement :meth:`scores` and :meth:`log_unnorm` on
    batches.  ``w_param_grad`` is an optional analytic fast path for the
    per-observation gradient of W with respect to the parameters.
    """

    name = "model"
    kind = "unconditional"
    obs_dim = 1
    markov_order = 0
    param_names: tuple[str, ...] = ()
    constraints: tuple[str, ...] = ()

    @property
    def param_dim(self) -> int:
        return len(self.param_names)

    @property
    def param_count(self) -> int:
        """Number of independently adjusted parameters, #(M_k)."""
        return self.param_dim

    def canonical(self, params) -> np.ndarray:
        """Representative of ``params`` among parameter values giving the same density."""
        return np.asarray(params, dtype=float)

    # -- batches ---------------------------------------------------------
    def batch(self, data: Dataset, truncation_l: int = 0) -> tuple:
        if data.kind != self.kind:
            raise ModelError(f"{self.name} expects {self.kind} data, got {data.kind}")
        obs = data.observations[truncation_l:]
        return (obs,)

    def obs_batch(self, obs) -> tuple:
        """Batch of size one from a single observation."""
        if self.obs_dim == 1:
            return (np.array([float(obs)]),)
        return (np.asarray(obs, dtype=float).reshape(1, self.obs_dim),)

    # -- analytic surface ------------------------------------------------
    def scores(self, batch: tuple, params) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(grad, lap)`` with shapes ``(m, obs_dim)`` and ``(m,)``."""
        raise NotImplementedError

    def log_unnorm(self, batch: tuple, params) -> np.ndarray:
        raise NotImplementedError

    def w_param_grad(self, batch: tuple, params) -> np.ndarray:
        raise NotImplementedError

    @property
    def has_param_grad(self) -> bool:
        return type(self).w_param_grad is not ScoreModel.w_param_grad

    def check_params(self, params) -> np.ndarray:
        p = np.asarray(params, dtype=float)
        if p.shape != (self.param_dim,):
            raise ModelError(f"{self.name} needs {self.param_dim} parameters, got shape {p.shape}")
        return p

    def w_values(self, batch: tuple, params) -> np.ndarray:
        grad, lap = self.scores(batch, params)
        return -np.sum(grad * grad, axis=1) - 2.0 * lap

    # per-observation conveniences
    def grad_log(self, obs, params) -> np.ndarray:
        return self.scores(self.obs_batch(obs), params)[0][0]

    def laplacian_log(self, obs, params) -> float:
        return float(self.scores(self.obs_batch(obs), params)[1][0])

    def log_unnorm_at(self, obs, params) -> float:
        return float(self.log_unnorm(self.obs_batch(obs), params)[0])


class ShiftedModel(ScoreModel):
    """Wraps a model, adding a constant to its log unnormalized density."""

    def __init__(self, base: ScoreModel, shift: float):
        self.base = base
        self.shift = float(shift)
        self.name = f"{base.name}+const"
        self.kind = base.kind
        self.obs_dim = base.obs_dim
        self.markov_order = base.markov_order
        self.param_names = base.param_names
        self.constraints = base.constraints

    def batch(self, data, truncation_l=0):
        return self.base.batch(data, truncation_l)

    def obs_batch(self, obs):
        return self.base.obs_batch(obs)

    def scores(self, batch, params):
        return self.base.scores(batch, params)

    def log_unnorm(self, batch, params):
        return self.base.log_unnorm(batch, params) + self.shift


def _column(grad: np.ndarray) -> np.ndarray:
    return grad.reshape(grad.shape[0], -1)


def _check_finite(grad: np.ndarray, lap: np.ndarray, offset: int = 0):
    bad = ~(np.all(np.isfinite(grad), axis=1) & np.isfinite(lap))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EvaluationError(f"non-finite score at observation {i + offset}", index=i + offset)


def w_objective(obs, model: ScoreModel, params, index: int = 0) -> WEvaluation:
    """W = -||grad log p||^2 - 2 * laplacian log p at a single observation."""
    params = model.check_params(params)
    grad, lap = model.scores(model.obs_batch(obs), params)
    grad = _column(grad)
    _check_finite(grad, lap, offset=index)
    g2 = float(np.dot(grad[0], grad[0]))
    lp = float(lap[0])
    return WEvaluation(w=-g2 - 2.0 * lp, grad_norm_sq=g2, laplacian=lp)


def _mean_w(model: ScoreModel, batch: tuple, params, offset: int) -> float:
    grad, lap = model.scores(batch, params)
    grad = _column(grad)
    _check_finite(grad, lap, offset)
    w = -np.sum(grad * grad, axis=1) - 2.0 * lap
    return float(np.mean(w))


def gic(data: Dataset, model: ScoreModel, params) -> GicValue:
    """Sample average of W over IID (or regression) observations."""
    if data.kind == "timeseries":
        raise ModelError("use cgic for time-series data")
    params = model.check_params(params)
    value = _mean_w(model, model.batch(data), params, 0)
    return GicValue(value, data.n_raw, 0)


def cgic(data: Dataset, model: ScoreModel, params, truncation_l: int) -> GicValue:
    """Conditional GIC averaged over t = L+1..N (1-based)."""
    if data.kind != "timeseries":
        raise ModelError("cgic needs time-series data")
    if truncation_l < model.markov_order:
        raise WindowError(f"truncation {truncation_l} below Markov order {model.markov_order}")
    if truncation_l >= data.n_raw:
        raise WindowError(f"truncation {truncation_l} leaves no observations (N={data.n_raw})")
    params = model.check_params(params)
    value = _mean_w(model, model.batch(data, truncation_l), params, truncation_l)
    return GicValue(value, data.n_raw - truncation_l, truncation_l)


def criterion_value(data: Dataset, model: ScoreModel, params, truncation_l: int = 0) -> GicValue:
    """GIC for IID/regression data, CGIC for time series."""
    if data.kind == "timeseries":
        return cgic(data, model, params, truncation_l)
    return gic(data, model, params)


def default_step(x) -> np.ndarray:
    """cbrt(eps) * (1 + |x|), the usual central-difference step."""
    return np.cbrt(np.finfo(float).eps) * (1.0 + np.abs(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class ScoreCheck:
    grad_err: float
    lap_err: float


def fd_score_check(model: ScoreModel, params, obs, step: float | None = None) -> ScoreCheck:
    """Compare analytic scores with central differences of ``log_unnorm``.

    Errors are relative with denominator ``max(1, |analytic|)``.  Only the
    differentiated variable is perturbed; covariates stay fixed.
    """
    params = model.check_params(params)
    batch = model.obs_batch(obs)
    resp = np.asarray(batch[0], dtype=float)
    rest = batch[1:]
    grad, lap = model.scores(batch, params)
    grad = _column(grad)[0]
    lap = float(lap[0])

    flat = resp.reshape(-1)
    f0 = float(model.log_unnorm(batch, params)[0])
    g_fd = np.empty_like(flat)
    lap_fd = 0.0
    for j in range(flat.size):
        h = step if step is not None else float(default_step(flat[j]))
        up, dn = flat.copy(), flat.copy()
        up[j] += h
        dn[j] -= h
        fu = float(model.log_unnorm((up.reshape(resp.shape),) + rest, params)[0])
        fd = float(model.log_unnorm((dn.reshape(resp.shape),) + rest, params)[0])
        g_fd[j] = (fu - fd) / (2 * h)
        # second derivative from a wider stencil keeps rounding error ~ eps/h^2 small
        H = max(h, 1e-3 * (1.0 + abs(flat[j])))
        up[j] = flat[j] + H
        dn[j] = flat[j] - H
        up2, dn2 = flat.copy(), flat.copy()
        up2[j] += 2 * H
        dn2[j] -= 2 * H
        vals = [float(model.log_unnorm((v.reshape(resp.shape),) + rest, params)[0]) for v in (up2, up, dn, dn2)]
        lap_fd += (-vals[0] + 16 * vals[1] - 30 * f0 + 16 * vals[2] - vals[3]) / (12 * H * H)

    grad_err = float(np.max(np.abs(grad - g_fd) / np.maximum(1.0, np.abs(grad))))
    lap_err = abs(lap - lap_fd) / max(1.0, abs(lap))
    return ScoreCheck(grad_err, float(lap_err))


@dataclass(frozen=True)
class FisherDivergence:
    divergence: float
    residual: float
    residual_se: float


def mc_fisher_divergence(p_model: ScoreModel, p_params, q_model: ScoreModel, q_params,
                         sample: Dataset) -> FisherDivergence:
    """Monte-Carlo Fisher divergence D_F(p||q) on a sample drawn from p.

    Also returns the residual of the identity
    ``avg W(., p) - avg W(., q) = divergence`` and its Monte-Carlo SE.
    """
    if p_model.obs_dim != q_model.obs_dim:
        raise ModelError("models disagree on obs_dim")
    bp = p_model.batch(sample, p_model.markov_order)
    bq = q_model.batch(sample, p_model.markov_order)
    gp, lp = p_model.scores(bp, p_model.check_params(p_params))
    gq, lq = q_model.scores(bq, q_model.check_params(q_params))
    gp, gq = _column(gp), _column(gq)
    diff = np.sum((gp - gq) ** 2, axis=1)
    wp = -np.sum(gp * gp, axis=1) - 2 * lp
    wq = -np.sum(gq * gq, axis=1) - 2 * lq
    r = wp - wq - diff
    n = r.size
    se = float(np.std(r, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return FisherDivergence(float(diff.mean()), float(abs(r.mean())), se)


def as_params(values: Sequence[float]) -> np.ndarray:
    return np.asarray(values, dtype=float)
