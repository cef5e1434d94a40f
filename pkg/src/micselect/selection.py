"""Nested model selection: MIC with data-free factors, bias-corrected GICc,
and Gaussian AIC/BIC baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Dataset, GicValue, ModelError, ScoreModel
from .estimation import FitConfig, FitResult, GicObjective, constraint_map, default_init, fit, pad_params
from .models import build_family, lag_matrix

MAXIMIZED = ("mic1", "mic2", "gicc")
MINIMIZED = ("aic", "bic")
CRITERIA = MAXIMIZED + MINIMIZED


class BiasError(ModelError):
    """The information matrix of W could not be inverted."""


class ScanError(ModelError):
    """Every candidate in a scan failed."""


# ---------------------------------------------------------------------------
# factors
# ---------------------------------------------------------------------------

def mic1_factor(n: float, param_count: float) -> float:
    return math.exp(-2.0 * param_count / n)


def mic2_factor(n: float, param_count: float) -> float:
    return n ** (-param_count / n)


FACTORS = {"mic1": mic1_factor, "mic2": mic2_factor}


@dataclass(frozen=True)
class MicFactor:
    variant: str

    def __post_init__(self):
        if self.variant not in FACTORS:
            raise ValueError(f"unknown MIC variant {self.variant!r}")

    def value(self, n_effective: float, param_count: float) -> float:
        return FACTORS[self.variant](n_effective, param_count)


def mic(gic_val: GicValue, param_count: int, variant: str) -> float:
    """C(n, #M_k) * GIC with n the effective sample size behind the average."""
    if gic_val.n_effective < 2:
        raise ModelError("MIC needs at least two effective observations")
    if param_count < 1:
        raise ModelError("param_count must be positive")
    return FACTORS[variant](gic_val.n_effective, param_count) * gic_val.value


def factor_divergence_probe(variant: str, k1: int, k2: int, n_grid: Sequence[float]) -> list[tuple[float, float]]:
    """Rows (n, n * log(C(n, k1) / C(n, k2))) for k1 >= k2.

    Computed from log factors so the closed forms -(k1 - k2) log n (mic2) and
    -2 (k1 - k2) (mic1) are reproduced without cancellation.
    """
    if k1 < k2 or k2 < 1:
        raise ValueError("need k1 >= k2 >= 1")
    if variant == "mic1":
        logf = lambda n, k: -2.0 * k / n
    elif variant == "mic2":
        logf = lambda n, k: -k * math.log(n) / n
    else:
        raise ValueError(f"unknown MIC variant {variant!r}")
    return [(float(n), n * (logf(n, k1) - logf(n, k2))) for n in n_grid]


# ---------------------------------------------------------------------------
# GICc
# ---------------------------------------------------------------------------

@dataclass
class BiasEstimate:
    lambda_hat: np.ndarray
    d_hat: np.ndarray
    b_value: float
    condition_flag: bool
    condition: float = float("nan")


def bias_estimate(data: Dataset, model: ScoreModel, fit_result: FitResult, fd_step: float | None = None,
                  truncation_l: int | None = None) -> BiasEstimate:
    """B = -trace(Lambda D^-1) in the optimizer's internal coordinates.

    Lambda is the average outer product of per-observation gradients of W,
    D the average Hessian, obtained by central differences of the averaged
    gradient (each column costs two O(n h) gradient sweeps).
    """
    z = np.asarray(fit_result.internal, dtype=float)
    cmap = fit_result.cmap or constraint_map(model, data)
    if truncation_l is None:
        truncation_l = fit_result.gic_at_opt.truncation_l
    obj = GicObjective(data, model, cmap, truncation_l)
    G = obj.per_obs_grad(z)
    n, h = G.shape
    lam = G.T @ G / n
    D = np.empty((h, h))
    steps = np.full(h, fd_step) if fd_step is not None else np.cbrt(np.finfo(float).eps) * (1.0 + np.abs(z))
    for j in range(h):
        up, dn = z.copy(), z.copy()
        up[j] += steps[j]
        dn[j] -= steps[j]
        D[:, j] = (obj.per_obs_grad(up).mean(axis=0) - obj.per_obs_grad(dn).mean(axis=0)) / (2 * steps[j])
    D = 0.5 * (D + D.T)
    if not np.all(np.isfinite(D)) or not np.all(np.isfinite(lam)):
        raise BiasError("non-finite information matrices")
    ev = np.abs(np.linalg.eigvalsh(D))
    cond = float(ev.max() / ev.min()) if ev.min() > 0 else float("inf")
    try:
        X = np.linalg.solve(D, lam)
    except np.linalg.LinAlgError as exc:
        raise BiasError("singular Hessian of W") from exc
    b = -float(np.trace(X))
    return BiasEstimate(lam, D, b, condition_flag=not cond < 1e10, condition=cond)


def gicc(data: Dataset, model: ScoreModel, fit_result: FitResult, fd_step: float | None = None,
         truncation_l: int | None = None) -> tuple[float, BiasEstimate]:
    """n * GIC(theta_hat) - B_k."""
    bias = bias_estimate(data, model, fit_result, fd_step, truncation_l)
    g = fit_result.gic_at_opt
    return g.n_effective * g.value - bias.b_value, bias


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------

@dataclass
class Candidate:
    k: int
    param_count: int
    fit: FitResult | None = None
    gic: GicValue | None = None
    criteria: dict = field(default_factory=dict)
    bias: BiasEstimate | None = None
    excluded: bool = False
    flags: list = field(default_factory=list)
    gaussian: GaussianFit | None = None

    def as_dict(self) -> dict:
        d = {
            "k": self.k,
            "param_count": self.param_count,
            "gic": None if self.gic is None else self.gic.value,
            "n_effective": None if self.gic is None else self.gic.n_effective,
            "criteria": {c: float(v) for c, v in self.criteria.items()},
            "excluded": self.excluded,
            "flags": list(self.flags),
        }
        if self.fit is not None:
            d["fit"] = self.fit.as_dict()
        if self.gaussian is not None:
            d["gaussian"] = self.gaussian.as_dict()
        if self.bias is not None:
            d["bias"] = {"b": self.bias.b_value, "condition": self.bias.condition,
                         "condition_flag": self.bias.condition_flag}
        return d


@dataclass
class SelectionScan:
    candidates: list
    criterion: str
    selected_k: int | None
    warnings: list = field(default_factory=list)

    @property
    def values(self) -> dict:
        return {c.k: c.criteria.get(self.criterion) for c in self.candidates if not c.excluded}

    def as_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "selected_k": self.selected_k,
            "values": {str(k): v for k, v in self.values.items()},
            "candidates": [c.as_dict() for c in self.candidates],
            "warnings": list(self.warnings),
        }


def select_index(values: dict, criterion: str) -> int | None:
    """Arg-best over candidates, ties to the smallest k."""
    best_k, best_v = None, None
    sign = 1.0 if criterion in MAXIMIZED else -1.0
    for k in sorted(values):
        v = values[k]
        if v is None or not np.isfinite(v):
            continue
        if best_v is None or sign * v > sign * best_v:
            best_k, best_v = k, v
    return best_k


def _count_excluded_warnings(cands):
    return [f"candidate {c.k} excluded: {'; '.join(c.flags)}" for c in cands if c.excluded]


def fit_candidates(data: Dataset, family_builder: Callable[[int], ScoreModel] | str, K: int,
                   fit_config: FitConfig | None = None, warm_start: bool = True,
                   exclude_unconverged: bool = True) -> tuple[list, list, int]:
    """Fit candidates 1..K by MGICE.

    Time series share the truncation L = K so every candidate averages over
    the same observations.  Candidate k+1 starts from the last converged
    estimate padded with zeros.  Returns (candidates, warnings, truncation_l).

    The empirical GIC of the Baker-type families is unbounded above: with
    enough location parameters a few residuals can be made zero and letting
    the scale shrink sends their W to infinity.  Runs drawn into that
    collapse never meet the gradient tolerance, so with
    ``exclude_unconverged`` such candidates are treated as failed fits.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    builder = (lambda k: build_family(family_builder, k)) if isinstance(family_builder, str) else family_builder
    cfg = fit_config or FitConfig()
    L = 0
    models = [builder(k) for k in range(1, K + 1)]
    if data.kind == "timeseries":
        L = max(K, max(m.markov_order for m in models))
    cands, warns = [], []
    prev = None
    for k, model in enumerate(models, start=1):
        cand = Candidate(k, model.param_count)
        try:
            init = None
            if warm_start and prev is not None:
                init = pad_params(prev, model)
            else:
                init = default_init(data, model, alpha=cfg.init_alpha, k=cfg.init_k, truncation_l=L)
            res = fit(data, model, init, cfg, truncation_l=L)
            cand.fit = res
            cand.gic = res.gic_at_opt
            if not res.converged:
                cand.flags.append(f"not converged: {res.message}")
                cand.excluded = exclude_unconverged
            else:
                prev = res
        except (ModelError, np.linalg.LinAlgError, FloatingPointError) as exc:
            cand.excluded = True
            cand.flags.append(f"fit failed: {exc}")
        cands.append(cand)
    warns += _count_excluded_warnings(cands)
    # a larger nested model can always reproduce the smaller one
    tol = max(cfg.bfgs.grad_tol, cfg.adam.tol)
    fitted = [c for c in cands if not c.excluded]
    for a, b in zip(fitted, fitted[1:]):
        if b.gic.value < a.gic.value - max(1e-6, 10 * tol) * max(1.0, abs(a.gic.value)):
            warns.append(f"GIC decreased from candidate {a.k} to {b.k}: optimization may have failed")
    if not fitted:
        raise ScanError("all candidate fits failed")
    return cands, warns, L


def apply_criterion(data: Dataset, candidates: list, criterion: str, models: dict | None = None,
                    fd_step: float | None = None) -> SelectionScan:
    """Evaluate ``criterion`` on fitted candidates and select."""
    if criterion not in MAXIMIZED:
        raise ValueError(f"criterion {criterion!r} needs Gaussian fits; use aic_bic_gaussian")
    warns = []
    for c in candidates:
        if c.excluded:
            continue
        if criterion == "gicc":
            if "gicc" in c.criteria:
                continue
            model = models[c.k]
            try:
                val, bias = gicc(data, model, c.fit, fd_step)
                c.bias = bias
                c.criteria["gicc"] = val
                if bias.condition_flag:
                    c.flags.append(f"ill-conditioned Hessian (cond={bias.condition:.3g})")
                    warns.append(f"candidate {c.k}: GICc Hessian condition {bias.condition:.3g} exceeds 1e10")
            except BiasError as exc:
                c.flags.append(f"bias failed: {exc}")
                c.criteria["gicc"] = float("nan")
                warns.append(f"candidate {c.k}: {exc}")
        else:
            c.criteria[criterion] = mic(c.gic, c.param_count, criterion)
    values = {c.k: c.criteria.get(criterion) for c in candidates if not c.excluded}
    k_hat = select_index(values, criterion)
    if k_hat is None:
        raise ScanError(f"no candidate has a finite {criterion} value")
    best = next(c for c in candidates if c.k == k_hat)
    if best.gic is not None and best.gic.value <= 0:
        warns.append(f"selected candidate {k_hat} has non-positive GIC {best.gic.value:.6g}; "
                     "consistency presumes positive GIC")
    return SelectionScan(candidates, criterion, k_hat, warns)


def scan_nested(data: Dataset, family_builder, K: int, criterion: str = "mic2",
                fit_config: FitConfig | None = None, fd_step: float | None = None) -> SelectionScan:
    """Fit candidates 1..K and select the one maximizing ``criterion``."""
    builder = (lambda k: build_family(family_builder, k)) if isinstance(family_builder, str) else family_builder
    cands, warns, _ = fit_candidates(data, builder, K, fit_config)
    models = {k: builder(k) for k in range(1, K + 1)}
    scan = apply_criterion(data, cands, criterion, models, fd_step)
    scan.warnings = warns + scan.warnings
    return scan


# ---------------------------------------------------------------------------
# Gaussian baselines
# ---------------------------------------------------------------------------

@dataclass
class GaussianFit:
    coef: np.ndarray
    c: float
    sigma2: float
    loglik: float
    n: int
    n_params: int
    residuals: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "c": self.c, "sigma2": self.sigma2,
                "loglik": self.loglik, "n": self.n, "n_params": self.n_params}


def _ols(X, y):
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise np.linalg.LinAlgError("rank-deficient design")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return coef, resid


def gaussian_ar_fit(series, order: int, truncation_l: int | None = None) -> GaussianFit:
    """Conditional least squares for x_t - c = sum a_j (x_{t-j} - c) + e_t."""
    target, lags = lag_matrix(series, order, truncation_l)
    X = np.column_stack([lags, np.ones(target.size)])
    coef, resid = _ols(X, target)
    a = coef[:order]
    denom = 1.0 - a.sum()
    c = float(coef[order] / denom) if abs(denom) > 1e-12 else float("nan")
    m = target.size
    s2 = float(resid @ resid / m)
    ll = -0.5 * m * (math.log(2 * math.pi * s2) + 1.0)
    return GaussianFit(a, c, s2, ll, m, order + 2, resid)


def gaussian_poly_fit(x, y, degree: int) -> GaussianFit:
    X = np.column_stack([np.power(np.asarray(x, float)[:, None], np.arange(1, degree + 1)), np.ones(len(x))])
    coef, resid = _ols(X, np.asarray(y, float))
    m = resid.size
    s2 = float(resid @ resid / m)
    ll = -0.5 * m * (math.log(2 * math.pi * s2) + 1.0)
    return GaussianFit(coef[:degree], float(coef[degree]), s2, ll, m, degree + 2, resid)


def aic_value(loglik: float, n_params: int) -> float:
    return 2.0 * n_params - 2.0 * loglik


def bic_value(loglik: float, n_params: int, n: int) -> float:
    return n_params * math.log(n) - 2.0 * loglik


def aic_bic_gaussian(data: Dataset, K: int, criterion: str = "bic") -> SelectionScan:
    """Gaussian-noise AR (time series) or polynomial (regression) selection by AIC/BIC.

    Parameter counts include the intercept/centre and the noise variance.
    AR candidates share the window t = K+1..N.
    """
    if criterion not in MINIMIZED:
        raise ValueError("criterion must be 'aic' or 'bic'")
    if data.n_raw <= K + 2:
        raise ModelError("need more than K + 2 observations")
    cands, warns = [], []
    for k in range(1, K + 1):
        cand = Candidate(k, k + 2)
        try:
            if data.kind == "timeseries":
                gf = gaussian_ar_fit(data.observations, k, K)
            elif data.kind == "regression":
                gf = gaussian_poly_fit(data.observations[:, 0], data.observations[:, 1], k)
            else:
                raise ModelError("AIC/BIC baselines need timeseries or regression data")
            cand.criteria["aic"] = aic_value(gf.loglik, gf.n_params)
            cand.criteria["bic"] = bic_value(gf.loglik, gf.n_params, gf.n)
            cand.criteria["loglik"] = gf.loglik
            cand.flags.append("gaussian")
            cand.fit = None
            cand.gaussian = gf
        except np.linalg.LinAlgError as exc:
            cand.excluded = True
            cand.flags.append(f"excluded: {exc}")
            warns.append(f"candidate {k} excluded: {exc}")
        cands.append(cand)
    values = {c.k: c.criteria[criterion] for c in cands if not c.excluded}
    k_hat = select_index(values, criterion)
    if k_hat is None:
        raise ScanError("all Gaussian candidates were rank deficient")
    return SelectionScan(cands, criterion, k_hat, warns)
