"""Maximum-GIC estimation (MGICE) with Adam and BFGS backends.

Optimization runs in an unconstrained internal space: positive parameters
are optimized on the log scale, angles are optimized on the real line and
wrapped into [0, 2pi) only when reported.  For polynomial regressions the
mean coefficients are additionally rotated through a QR factor of the
design so that high-degree candidates are well conditioned; this is a
linear reparameterization and leaves the maximizer unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .core import Dataset, GicValue, ModelError, ScoreModel, default_step
from .models import TWO_PI, ArBakerModel, BakerModel, PolyBakerModel, VonMisesModel, lag_matrix

TAGS = ("identity", "log", "angle")
BOUNDARY_LOG = math.log(1e-8)


class InitializationError(ModelError):
    """The objective is not finite at the starting point, or the data are degenerate."""


class OptimizationError(ModelError):
    """The optimizer could not produce a finite iterate."""


# ---------------------------------------------------------------------------
# reparameterization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintMap:
    """Per-coordinate transforms, with an optional linear map on a leading block.

    ``linear`` is a square matrix M acting on the first ``M.shape[0]``
    coordinates (which must be identity-tagged): theta_block = M @ z_block.
    """

    tags: tuple
    linear: np.ndarray | None = None

    def __post_init__(self):
        for t in self.tags:
            if t not in TAGS:
                raise ValueError(f"unknown transform tag {t!r}")
        if self.linear is not None:
            b = self.linear.shape[0]
            if any(t != "identity" for t in self.tags[:b]):
                raise ValueError("linear block must cover identity-tagged coordinates")

    @cached_property
    def log_mask(self) -> np.ndarray:
        return np.array([t == "log" for t in self.tags])

    def to_internal(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        z = theta.copy()
        mask = self.log_mask
        if np.any(theta[mask] <= 0):
            raise InitializationError("log-transformed coordinate must be positive")
        z[mask] = np.log(theta[mask])
        if self.linear is not None:
            b = self.linear.shape[0]
            z[:b] = np.linalg.solve(self.linear, theta[:b])
        return z

    def from_internal(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        theta = z.copy()
        mask = self.log_mask
        if self.linear is None and not mask.any():
            return theta
        with np.errstate(over="ignore"):
            theta[mask] = np.exp(z[mask])
        if self.linear is not None:
            b = self.linear.shape[0]
            theta[:b] = self.linear @ z[:b]
        return theta

    def report(self, theta) -> np.ndarray:
        """Reporting scale: angles wrapped into [0, 2pi)."""
        theta = np.array(theta, dtype=float)
        for j, t in enumerate(self.tags):
            if t == "angle":
                theta[j] = float(np.mod(theta[j], TWO_PI))
        return theta

    def pullback(self, z, grad_theta) -> np.ndarray:
        """Chain rule: gradient(s) with respect to theta -> internal z.

        Works on a single gradient ``(h,)`` or per-observation rows ``(m, h)``.
        """
        mask = self.log_mask
        if self.linear is None and not mask.any():
            return np.asarray(grad_theta, dtype=float)
        g = np.array(grad_theta, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            scale = np.where(mask, np.exp(np.asarray(z, dtype=float)), 1.0)
            g = g * scale
            if self.linear is not None:
                b = self.linear.shape[0]
                g[..., :b] = g[..., :b] @ self.linear
        return g


def constraint_map(model: ScoreModel, data: Dataset | None = None, precondition: bool = True,
                   tags: tuple | None = None) -> ConstraintMap:
    tags = tuple(tags or model.constraints)
    linear = None
    if precondition and isinstance(model, PolyBakerModel) and data is not None:
        X = model.design(data)
        n = X.shape[0]
        _, R = np.linalg.qr(X)
        if np.min(np.abs(np.diag(R))) > 1e-12 * np.max(np.abs(np.diag(R))):
            linear = math.sqrt(n) * np.linalg.inv(R)
    return ConstraintMap(tags, linear)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

class GicObjective:
    """GIC (or CGIC) as a function of the internal parameter vector."""

    def __init__(self, data: Dataset, model: ScoreModel, cmap: ConstraintMap, truncation_l: int = 0):
        self.data = data
        self.model = model
        self.cmap = cmap
        self.truncation_l = truncation_l if data.kind == "timeseries" else 0
        self.batch = model.batch(data, self.truncation_l) if data.kind == "timeseries" else model.batch(data)
        self.n_effective = int(self.batch[0].shape[0])
        self.evaluations = 0

    def value(self, z) -> float:
        self.evaluations += 1
        theta = self.cmap.from_internal(z)
        with np.errstate(all="ignore"):
            w = self.model.w_values(self.batch, theta)
            val = float(np.mean(w))
        return val if np.isfinite(val) else float("nan")

    def per_obs_grad(self, z) -> np.ndarray:
        """Rows are the gradients of W(x_i) with respect to z."""
        theta = self.cmap.from_internal(z)
        if self.model.has_param_grad:
            with np.errstate(all="ignore"):
                return self.cmap.pullback(z, self.model.w_param_grad(self.batch, theta))
        z = np.asarray(z, dtype=float)
        h = default_step(z)
        out = np.empty((self.n_effective, z.size))
        for j in range(z.size):
            up, dn = z.copy(), z.copy()
            up[j] += h[j]
            dn[j] -= h[j]
            wu = self.model.w_values(self.batch, self.cmap.from_internal(up))
            wd = self.model.w_values(self.batch, self.cmap.from_internal(dn))
            out[:, j] = (wu - wd) / (2 * h[j])
        return out

    def value_and_grad(self, z):
        z = np.asarray(z, dtype=float)
        val = self.value(z)
        if not np.isfinite(val):
            return val, np.full(z.shape, np.nan)
        if self.model.has_param_grad:
            theta = self.cmap.from_internal(z)
            with np.errstate(all="ignore"):
                g_theta = self.model.w_param_grad(self.batch, theta).mean(axis=0)
            return val, self.cmap.pullback(z, g_theta)
        h = default_step(z)
        g = np.empty_like(z)
        for j in range(z.size):
            up, dn = z.copy(), z.copy()
            up[j] += h[j]
            dn[j] -= h[j]
            g[j] = (self.value(up) - self.value(dn)) / (2 * h[j])
        return val, g

    def gic_value(self, z) -> GicValue:
        return GicValue(self.value(z), self.n_effective, self.truncation_l)


# ---------------------------------------------------------------------------
# results and configs
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    params_hat: np.ndarray
    gic_at_opt: GicValue
    iterations: int
    converged: bool
    optimizer: str
    init_used: np.ndarray
    model_name: str = ""
    param_names: tuple = ()
    boundary: bool = False
    message: str = ""
    internal: np.ndarray | None = field(default=None, repr=False)
    cmap: ConstraintMap | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "model": self.model_name,
            "params": {n: float(v) for n, v in zip(self.param_names, self.params_hat)},
            "gic": self.gic_at_opt.value,
            "n_effective": self.gic_at_opt.n_effective,
            "truncation_l": self.gic_at_opt.truncation_l,
            "iterations": self.iterations,
            "converged": self.converged,
            "optimizer": self.optimizer,
            "boundary": self.boundary,
            "init": [float(v) for v in self.init_used],
            "message": self.message,
        }


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iter: int = 5000
    tol: float = 1e-6


@dataclass(frozen=True)
class BfgsConfig:
    grad_tol: float = 1e-6
    max_iter: int = 1000


@dataclass(frozen=True)
class FitConfig:
    optimizer: str = "bfgs"
    adam: AdamConfig = AdamConfig()
    bfgs: BfgsConfig = BfgsConfig()
    init_alpha: float = 0.25
    init_k: float = 1.0
    precondition: bool = True

    def with_optimizer(self, name: str) -> "FitConfig":
        return replace(self, optimizer=name)

    def as_dict(self) -> dict:
        return {
            "optimizer": self.optimizer,
            "adam": vars(self.adam).copy(),
            "bfgs": vars(self.bfgs).copy(),
            "init_alpha": self.init_alpha,
            "init_k": self.init_k,
            "precondition": self.precondition,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        adam = AdamConfig(**d.pop("adam", {}))
        bfgs = BfgsConfig(**d.pop("bfgs", {}))
        return cls(adam=adam, bfgs=bfgs, **d)


def _prepare(data, model, init, cmap, truncation_l, precondition=True):
    init = model.check_params(init)
    if cmap is None:
        cmap = constraint_map(model, data, precondition)
    if truncation_l is None:
        truncation_l = model.markov_order
    obj = GicObjective(data, model, cmap, truncation_l)
    z0 = cmap.to_internal(init)
    return obj, z0, init, cmap


def _finish(obj: GicObjective, z, iterations, converged, optimizer, init, message) -> FitResult:
    cmap = obj.cmap
    theta = cmap.from_internal(z)
    boundary = bool(np.any(np.asarray(z)[cmap.log_mask] < BOUNDARY_LOG))
    if boundary:
        converged = False
        message = (message + "; " if message else "") + "positive parameter collapsed to the boundary"
    return FitResult(
        params_hat=cmap.report(obj.model.canonical(theta)),
        gic_at_opt=obj.gic_value(z),
        iterations=iterations,
        converged=bool(converged),
        optimizer=optimizer,
        init_used=np.asarray(init, dtype=float).copy(),
        model_name=obj.model.name,
        param_names=tuple(obj.model.param_names),
        boundary=boundary,
        message=message,
        internal=np.asarray(z, dtype=float).copy(),
        cmap=cmap,
    )


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def mgice_adam(data: Dataset, model: ScoreModel, init, config: AdamConfig | None = None, *,
               truncation_l: int | None = None, cmap: ConstraintMap | None = None,
               precondition: bool = True) -> FitResult:
    """Ascend GIC with Adam in the internal space.

    A step that produces a non-finite objective is rejected and the learning
    rate halved, at most 20 times.  The best iterate seen is returned.
    """
    cfg = config or AdamConfig()
    obj, z, init, cmap = _prepare(data, model, init, cmap, truncation_l, precondition)
    f, g = obj.value_and_grad(z)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise InitializationError(f"objective not finite at init {init.tolist()}")

    m = np.zeros_like(z)
    v = np.zeros_like(z)
    lr = cfg.lr
    halvings = 0
    best_z, best_f = z.copy(), f
    converged = False
    message = ""
    it = 0
    t = 0
    while it < cfg.max_iter:
        it += 1
        t += 1
        m_new = cfg.beta1 * m + (1 - cfg.beta1) * g
        v_new = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mhat = m_new / (1 - cfg.beta1 ** t)
        vhat = v_new / (1 - cfg.beta2 ** t)
        step = lr * mhat / (np.sqrt(vhat) + cfg.eps)
        z_new = z + step
        f_new, g_new = obj.value_and_grad(z_new)
        if not (np.isfinite(f_new) and np.all(np.isfinite(g_new))):
            halvings += 1
            t -= 1
            lr *= 0.5
            if halvings > 20:
                message = "non-finite objective after 20 learning-rate halvings"
                break
            continue
        z, f, g, m, v = z_new, f_new, g_new, m_new, v_new
        if f > best_f:
            best_z, best_f = z.copy(), f
        if np.max(np.abs(step)) < cfg.tol:
            converged = True
            break
    if not converged and not message:
        message = "iteration budget exhausted" if cfg.max_iter > 0 else "zero iteration budget"
    z_out = best_z if best_f >= f else z
    if cfg.max_iter == 0:
        z_out = cmap.to_internal(init)
    return _finish(obj, z_out, it, converged, "adam", init, message)


# ---------------------------------------------------------------------------
# BFGS
# ---------------------------------------------------------------------------

def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic through (a, fa, ga), (b, fb, gb); None if undefined."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    rad = d1 * d1 - ga * gb
    if rad < 0:
        return None
    d2 = math.copysign(math.sqrt(rad), b - a)
    denom = gb - ga + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def _refine(phi, f0, g0, a, fa, ga, pay, c1, c2):
    """One secant step on phi' from (0, g0) and (a, ga); exact on quadratics.

    Kept only when it lowers phi and still meets the strong-Wolfe conditions.
    """
    if not (np.isfinite(ga) and ga != g0):
        return a, fa, pay
    a_s = a * g0 / (g0 - ga)
    if not (0.1 * a <= a_s <= 10.0 * a) or abs(a_s - a) <= 1e-3 * a:
        return a, fa, pay
    fs, gs, pays = phi(a_s)
    if np.isfinite(fs) and fs < fa and fs <= f0 + c1 * a_s * g0 and abs(gs) <= -c2 * g0:
        return a_s, fs, pays
    return a, fa, pay


def _line_search(phi, f0, g0, alpha1, c1=1e-4, c2=0.9, max_trials=40):
    """Strong-Wolfe line search on phi(alpha) -> (f, dphi, payload).

    Returns (alpha, f, payload, ok, trials).  ``payload`` carries whatever the
    caller needs at the accepted point (the full gradient).
    """
    trials = 0
    a_prev, f_prev, g_prev = 0.0, f0, g0
    a = alpha1
    best = (0.0, f0, None)

    def zoom(lo, flo, glo, hi, fhi, ghi):
        nonlocal trials, best
        while trials < max_trials:
            aj = _cubic_min(lo, flo, glo, hi, fhi, ghi) if np.isfinite(fhi) else None
            lo_, hi_ = min(lo, hi), max(lo, hi)
            width = hi_ - lo_
            if aj is None or not (lo_ + 0.1 * width <= aj <= hi_ - 0.1 * width):
                aj = 0.5 * (lo + hi)
            fj, gj, pay = phi(aj)
            trials += 1
            if np.isfinite(fj) and fj < best[1]:
                best = (aj, fj, pay)
            if not np.isfinite(fj) or fj > f0 + c1 * aj * g0 or fj >= flo:
                hi, fhi, ghi = aj, fj, gj
            else:
                if abs(gj) <= -c2 * g0:
                    return aj, fj, pay, True
                if gj * (hi - lo) >= 0:
                    hi, fhi, ghi = lo, flo, glo
                lo, flo, glo = aj, fj, gj
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        return None

    while trials < max_trials:
        fa, ga, pay = phi(a)
        trials += 1
        if np.isfinite(fa) and fa < best[1]:
            best = (a, fa, pay)
        if not np.isfinite(fa) or fa > f0 + c1 * a * g0 or (trials > 1 and fa >= f_prev):
            res = zoom(a_prev, f_prev, g_prev, a, fa, ga)
            break
        if abs(ga) <= -c2 * g0:
            return _refine(phi, f0, g0, a, fa, ga, pay, c1, c2) + (True, trials + 1)
        if ga >= 0:
            res = zoom(a, fa, ga, a_prev, f_prev, g_prev)
            break
        a_prev, f_prev, g_prev = a, fa, ga
        a = 2.0 * a
    else:
        res = None
    if res is not None:
        return res[0], res[1], res[2], True, trials
    return best[0], best[1], best[2], False, trials


def bfgs_minimize(fun, x0, grad_tol=1e-6, max_iter=1000, max_trials=40):
    """Minimize ``fun(x) -> (f, grad)`` with BFGS and a strong-Wolfe search.

    Returns ``(x, f, iterations, converged, message)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise InitializationError("objective not finite at the starting point")
    n = x.size
    H = np.eye(n)
    first = True
    it = 0
    if np.max(np.abs(g)) < grad_tol:
        return x, f, 0, True, "gradient below tolerance"
    while it < max_iter:
        it += 1
        p = -H @ g
        dphi0 = float(p @ g)
        if dphi0 >= 0:
            H = np.eye(n)
            p = -g
            dphi0 = float(p @ g)

        def phi(a):
            xa = x + a * p
            fa, ga = fun(xa)
            if not np.all(np.isfinite(ga)):
                return fa, float("nan"), ga
            with np.errstate(over="ignore", invalid="ignore"):
                return fa, float(ga @ p), ga

        alpha1 = min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-300)) if first else 1.0
        a, f_new, g_new, ok, _ = _line_search(phi, f, dphi0, alpha1, max_trials=max_trials)
        if g_new is None or a == 0.0:
            return x, f, it, False, "line search failed"
        s = a * p
        x_new = x + s
        y = g_new - g
        sy = float(s @ y)
        x, f, g = x_new, f_new, g_new
        if np.max(np.abs(g)) < grad_tol:
            return x, f, it, True, "gradient below tolerance"
        if not ok:
            return x, f, it, False, "line search failed"
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            if first:
                H = np.eye(n) * (sy / float(y @ y))
                first = False
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
    return x, f, it, False, "iteration budget exhausted"


def mgice_bfgs(data: Dataset, model: ScoreModel, init, config: BfgsConfig | None = None, *,
               truncation_l: int | None = None, cmap: ConstraintMap | None = None,
               precondition: bool = True) -> FitResult:
    """Maximize GIC with BFGS in the internal space."""
    cfg = config or BfgsConfig()
    obj, z0, init, cmap = _prepare(data, model, init, cmap, truncation_l, precondition)

    def neg(z):
        f, g = obj.value_and_grad(z)
        return -f, -g

    f0, g0 = neg(z0)
    if not np.isfinite(f0) or not np.all(np.isfinite(g0)):
        raise InitializationError(f"objective not finite at init {init.tolist()}")
    z, _, it, conv, msg = bfgs_minimize(neg, z0, cfg.grad_tol, cfg.max_iter)
    return _finish(obj, z, it, conv, "bfgs", init, msg)


def fit(data: Dataset, model: ScoreModel, init=None, config: FitConfig | None = None, *,
        truncation_l: int | None = None) -> FitResult:
    """MGICE with the optimizer named in ``config``; default init when none given."""
    cfg = config or FitConfig()
    if init is None:
        init = default_init(data, model, alpha=cfg.init_alpha, k=cfg.init_k, truncation_l=truncation_l)
    if cfg.optimizer == "adam":
        return mgice_adam(data, model, init, cfg.adam, truncation_l=truncation_l, precondition=cfg.precondition)
    if cfg.optimizer == "bfgs":
        return mgice_bfgs(data, model, init, cfg.bfgs, truncation_l=truncation_l, precondition=cfg.precondition)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def default_init(data: Dataset, family, *, alpha: float = 0.25, k: float = 1.0,
                 truncation_l: int | None = None) -> np.ndarray:
    """Starting values in the reporting scale.

    Baker: (sample mean, sample sd, alpha, k).  AR-Baker: least-squares AR
    coefficients with c at the sample mean and s at the residual sd.
    Poly-Baker: least-squares coefficients and residual sd.  von Mises:
    zeros, with the concentrations at 1e-3 so a log transform (if one is
    requested through the constraint map) stays finite.
    """
    model = family
    if isinstance(family, str):
        from .models import build_family
        model = build_family(family, 1 if family != "vonmises" else 2)
    if isinstance(model, BakerModel):
        y = np.asarray(data.observations, dtype=float).reshape(-1)
        sd = float(np.std(y, ddof=1)) if y.size > 1 else 0.0
        if not sd > 0:
            raise InitializationError("zero-variance data")
        return np.array([float(y.mean()), sd, alpha, k])
    if isinstance(model, ArBakerModel):
        x = np.asarray(data.observations, dtype=float)
        c = float(x.mean())
        if not np.std(x) > 0:
            raise InitializationError("zero-variance series")
        L = model.order if truncation_l is None else truncation_l
        target, lags = lag_matrix(x - c, model.order, L)
        a, *_ = np.linalg.lstsq(lags, target, rcond=None)
        resid = target - lags @ a
        s = float(np.std(resid, ddof=1))
        if not s > 0:
            raise InitializationError("zero residual variance")
        return np.concatenate([a, [c, s, alpha, k]])
    if isinstance(model, PolyBakerModel):
        X = model.design(data)
        y = data.observations[:, 1]
        if not np.std(y) > 0:
            raise InitializationError("zero-variance response")
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        s = float(np.std(resid, ddof=1))
        if not s > 0:
            raise InitializationError("zero residual variance")
        return np.concatenate([coef, [s, alpha, k]])
    if isinstance(model, VonMisesModel):
        p = np.zeros(model.param_dim)
        p[:2] = 1e-3
        return p
    return np.zeros(model.param_dim)


def pad_params(prev: FitResult, model: ScoreModel) -> np.ndarray:
    """Warm start for the next nested candidate: insert zeros for new coordinates."""
    old = np.asarray(prev.params_hat, dtype=float)
    new_dim = model.param_dim
    extra = new_dim - old.size
    if extra < 0:
        raise ModelError("warm start target is smaller than the previous model")
    if isinstance(model, (ArBakerModel, PolyBakerModel)):
        n_coef = old.size - 4
        return np.concatenate([old[:n_coef], np.zeros(extra), old[n_coef:]])
    return np.concatenate([old, np.zeros(extra)])
