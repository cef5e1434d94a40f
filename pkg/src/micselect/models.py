"""Model families with closed-form data scores.

Baker (normal x t) noise appears in three guises: IID location/scale, AR(p)
with mean centring, and polynomial regression.  They share one residual
kernel; only the conditional location differs.  The bivariate von Mises
family lives on the torus, and a Gaussian location family serves as an
analytic oracle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, ModelError, ScoreModel

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# parameter records
# ---------------------------------------------------------------------------

def _positive(name: str, value: float):
    if not value > 0:
        raise ModelError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class BakerParams:
    mu: float
    s: float
    alpha: float
    k: float

    def __post_init__(self):
        for name in ("s", "alpha", "k"):
            _positive(name, getattr(self, name))

    def to_vector(self) -> np.ndarray:
        return np.array([self.mu, self.s, self.alpha, self.k])

    @classmethod
    def from_vector(cls, v) -> "BakerParams":
        return cls(*map(float, v))


@dataclass(frozen=True)
class ArBakerParams:
    a: tuple
    c: float
    s: float
    alpha: float
    k: float

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        if len(self.a) < 1:
            raise ModelError("AR order must be at least 1")
        for name in ("s", "alpha", "k"):
            _positive(name, getattr(self, name))

    @property
    def order(self) -> int:
        return len(self.a)

    def to_vector(self) -> np.ndarray:
        return np.array([*self.a, self.c, self.s, self.alpha, self.k])

    @classmethod
    def from_vector(cls, v) -> "ArBakerParams":
        v = [float(x) for x in v]
        return cls(tuple(v[:-4]), *v[-4:])


@dataclass(frozen=True)
class PolyBakerParams:
    beta: tuple
    c: float
    s: float
    alpha: float
    k: float

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        if len(self.beta) < 1:
            raise ModelError("polynomial degree must be at least 1")
        for name in ("s", "alpha", "k"):
            _positive(name, getattr(self, name))

    @property
    def degree(self) -> int:
        return len(self.beta)

    def mean(self, x):
        x = np.asarray(x, dtype=float)
        return _powers(x, self.degree) @ np.asarray(self.beta) + self.c

    def to_vector(self) -> np.ndarray:
        return np.array([*self.beta, self.c, self.s, self.alpha, self.k])

    @classmethod
    def from_vector(cls, v) -> "PolyBakerParams":
        v = [float(x) for x in v]
        return cls(tuple(v[:-4]), *v[-4:])


@dataclass(frozen=True)
class VonMisesParams:
    kappa1: float
    kappa2: float
    mu1: float
    mu2: float
    lam: float = 0.0
    lambda_fixed_zero: bool = False

    def __post_init__(self):
        if self.kappa1 < 0 or self.kappa2 < 0:
            raise ModelError("concentrations must be non-negative")
        if self.lambda_fixed_zero and self.lam != 0.0:
            raise ModelError("lambda must be 0 when fixed")

    def wrapped(self) -> "VonMisesParams":
        return VonMisesParams(self.kappa1, self.kappa2, float(np.mod(self.mu1, TWO_PI)),
                              float(np.mod(self.mu2, TWO_PI)), self.lam, self.lambda_fixed_zero)

    def to_vector(self) -> np.ndarray:
        v = [self.kappa1, self.kappa2, self.mu1, self.mu2]
        return np.array(v if self.lambda_fixed_zero else v + [self.lam])

    @classmethod
    def from_vector(cls, v) -> "VonMisesParams":
        v = [float(x) for x in v]
        if len(v) == 4:
            return cls(*v, lam=0.0, lambda_fixed_zero=True)
        return cls(*v)


# ---------------------------------------------------------------------------
# Baker residual kernel
# ---------------------------------------------------------------------------

def _baker_terms(z, alpha, k):
    z2 = z * z
    d = 1.0 + z2
    r = z / d
    q = (1.0 - z2) / (d * d)
    u = alpha * z + 2.0 * k * r
    v = alpha + 2.0 * k * q
    return z2, d, r, q, u, v


def baker_score(y, params: BakerParams):
    """Gradient and Laplacian in y of log Baker(y; mu, s, alpha, k)."""
    y = np.asarray(y, dtype=float)
    z = (y - params.mu) / params.s
    _, _, _, _, u, v = _baker_terms(z, params.alpha, params.k)
    grad = -u / params.s
    lap = -v / params.s ** 2
    if grad.ndim == 0:
        return float(grad), float(lap)
    return grad, lap


def baker_acceptance(z, k):
    """Acceptance probability (1 + z^2)^-k for the N(0, 1/alpha) envelope."""
    return np.power(1.0 + np.asarray(z, dtype=float) ** 2, -k)


class _BakerNoiseModel(ScoreModel):
    """Shared machinery: W depends on the parameters through a location,
    the scale s and the shape pair (alpha, k)."""

    n_loc: int = 1

    def _location(self, batch, p) -> np.ndarray:
        raise NotImplementedError

    def _location_jac(self, batch, p) -> np.ndarray:
        raise NotImplementedError

    def _residual(self, batch, p):
        s = p[-3]
        return (batch[0] - self._location(batch, p)) / s

    def scores(self, batch, params):
        p = np.asarray(params, dtype=float)
        s, alpha, k = p[-3:]
        z = self._residual(batch, p)
        _, _, _, _, u, v = _baker_terms(z, alpha, k)
        return (-u / s)[:, None], -v / (s * s)

    def log_unnorm(self, batch, params):
        p = np.asarray(params, dtype=float)
        s, alpha, k = p[-3:]
        z = self._residual(batch, p)
        return -np.log(s) - 0.5 * alpha * z * z - k * np.log1p(z * z)

    def w_values(self, batch, params):
        p = np.asarray(params, dtype=float)
        s, alpha, k = p[-3:]
        z = self._residual(batch, p)
        _, _, _, _, u, v = _baker_terms(z, alpha, k)
        return (-u * u + 2.0 * v) / (s * s)

    def w_param_grad(self, batch, params):
        p = np.asarray(params, dtype=float)
        s, alpha, k = p[-3:]
        z = self._residual(batch, p)
        z2, d, r, q, u, v = _baker_terms(z, alpha, k)
        F = -u * u + 2.0 * v
        dq = (2.0 * z2 * z - 6.0 * z) / (d * d * d)
        Fz = -2.0 * u * (alpha + 2.0 * k * q) + 4.0 * k * dq
        s2, s3 = s * s, s * s * s
        out = np.empty((z.shape[0], p.shape[0]))
        dloc = -Fz / s3
        out[:, : self.n_loc] = dloc[:, None] * self._location_jac(batch, p)
        out[:, -3] = (-2.0 * F - z * Fz) / s3
        out[:, -2] = (2.0 - 2.0 * u * z) / s2
        out[:, -1] = (4.0 * q - 4.0 * u * r) / s2
        return out

    def residuals(self, data: Dataset, params, truncation_l: int = 0) -> np.ndarray:
        """Standardized residuals (y - location) / s."""
        return self._residual(self.batch(data, truncation_l), self.check_params(params))


class BakerModel(_BakerNoiseModel):
    """IID Baker location/scale family, parameters (mu, s, alpha, k)."""

    name = "baker"
    kind = "unconditional"
    param_names = ("mu", "s", "alpha", "k")
    constraints = ("identity", "log", "log", "log")

    def batch(self, data, truncation_l=0):
        b = super().batch(data, truncation_l)
        return (b[0].reshape(-1),)

    def _location(self, batch, p):
        return p[0]

    def _location_jac(self, batch, p):
        return np.ones((batch[0].shape[0], 1))


def lag_matrix(series, order: int, truncation_l: int | None = None):
    """Targets x_t and lags (x_{t-1}, ..., x_{t-p}) for t = L+1..N."""
    x = np.asarray(series, dtype=float)
    L = order if truncation_l is None else truncation_l
    if L < order:
        raise ModelError(f"truncation {L} is below the lag order {order}")
    n = x.shape[0]
    target = x[L:]
    lags = np.column_stack([x[L - j: n - j] for j in range(1, order + 1)]) if order else np.empty((n - L, 0))
    return target, lags


class ArBakerModel(_BakerNoiseModel):
    """AR(p) with Baker noise, parameters (a_1..a_p, c, s, alpha, k).

    Scores are taken with respect to the current value x_t; lags are fixed.
    """

    kind = "timeseries"
    constraints: tuple

    def __init__(self, order: int):
        if order < 1:
            raise ModelError("AR order must be at least 1")
        self.order = int(order)
        self.markov_order = self.order
        self.n_loc = self.order + 1
        self.name = f"ar{order}-baker"
        self.param_names = tuple(f"a{j}" for j in range(1, order + 1)) + ("c", "s", "alpha", "k")
        self.constraints = ("identity",) * (order + 1) + ("log", "log", "log")

    def batch(self, data, truncation_l=None):
        if data.kind != "timeseries":
            raise ModelError(f"{self.name} expects timeseries data, got {data.kind}")
        L = self.order if truncation_l is None else truncation_l
        return lag_matrix(data.observations, self.order, L)

    def obs_batch(self, obs):
        xt, lags = obs
        lags = np.asarray(lags, dtype=float).reshape(1, -1)
        if lags.shape[1] != self.order:
            raise ModelError(f"{self.name} needs {self.order} lags, got {lags.shape[1]}")
        return (np.array([float(xt)]), lags)

    def _location(self, batch, p):
        a = p[: self.order]
        c = p[self.order]
        return c + (batch[1] - c) @ a

    def _location_jac(self, batch, p):
        a = p[: self.order]
        c = p[self.order]
        jac = np.empty((batch[0].shape[0], self.order + 1))
        jac[:, : self.order] = batch[1] - c
        jac[:, self.order] = 1.0 - a.sum()
        return jac

    def one_step(self, lags, params) -> float:
        """Conditional mean of x_t given lags (x_{t-1}, ..., x_{t-p})."""
        p = self.check_params(params)
        return float(self._location((None, np.asarray(lags, dtype=float).reshape(1, -1)), p)[0])


def ar_baker_score(window, params: ArBakerParams):
    """Scores in x_t for a window ``(x_t, (x_{t-1}, ..., x_{t-p}))``."""
    model = ArBakerModel(params.order)
    grad, lap = model.scores(model.obs_batch(window), params.to_vector())
    return float(grad[0, 0]), float(lap[0])


def _powers(x, degree: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.power(x[..., None], np.arange(1, degree + 1))


class PolyBakerModel(_BakerNoiseModel):
    """Degree-p polynomial regression with Baker errors,
    parameters (beta_1..beta_p, c, s, alpha, k)."""

    kind = "regression"

    def __init__(self, degree: int):
        if degree < 1:
            raise ModelError("polynomial degree must be at least 1")
        self.degree = int(degree)
        self.n_loc = self.degree + 1
        self.name = f"poly{degree}-baker"
        self.param_names = tuple(f"beta{j}" for j in range(1, degree + 1)) + ("c", "s", "alpha", "k")
        self.constraints = ("identity",) * (degree + 1) + ("log", "log", "log")

    def batch(self, data, truncation_l=0):
        if data.kind != "regression":
            raise ModelError(f"{self.name} expects regression data, got {data.kind}")
        obs = data.observations
        return (obs[:, 1].copy(), _powers(obs[:, 0], self.degree))

    def obs_batch(self, obs):
        x, y = obs
        return (np.array([float(y)]), _powers(np.array([float(x)]), self.degree))

    def _location(self, batch, p):
        return batch[1] @ p[: self.degree] + p[self.degree]

    def _location_jac(self, batch, p):
        m = batch[0].shape[0]
        return np.column_stack([batch[1], np.ones(m)])

    def design(self, data: Dataset) -> np.ndarray:
        """Mean-function design matrix [x, x^2, ..., x^p, 1]."""
        X = self.batch(data)[1]
        return np.column_stack([X, np.ones(X.shape[0])])


def poly_baker_score(pair, params: PolyBakerParams):
    """Scores in y for one (x, y) pair."""
    model = PolyBakerModel(params.degree)
    grad, lap = model.scores(model.obs_batch(pair), params.to_vector())
    return float(grad[0, 0]), float(lap[0])


# ---------------------------------------------------------------------------
# bivariate von Mises (sine model) on the torus
# ---------------------------------------------------------------------------

def _vm_terms(X, p):
    k1, k2, m1, m2, lam = p
    d1 = X[:, 0] - m1
    d2 = X[:, 1] - m2
    S1, C1, S2, C2 = np.sin(d1), np.cos(d1), np.sin(d2), np.cos(d2)
    g1 = -k1 * S1 + lam * C1 * S2
    g2 = -k2 * S2 + lam * S1 * C2
    lap = -k1 * C1 - k2 * C2 - 2.0 * lam * S1 * S2
    return S1, C1, S2, C2, g1, g2, lap


class VonMisesModel(ScoreModel):
    """Bivariate von Mises sine model.

    ``variant="m2"`` estimates (kappa1, kappa2, mu1, mu2, lambda);
    ``variant="m1"`` fixes lambda = 0 (independent margins).
    """

    kind = "unconditional"
    obs_dim = 2

    def __init__(self, variant: str = "m2"):
        if variant not in ("m1", "m2"):
            raise ModelError(f"unknown von Mises variant {variant!r}")
        self.variant = variant
        self.name = f"vonmises-{variant}"
        names = ("kappa1", "kappa2", "mu1", "mu2")
        # kappa is optimized unconstrained; a negative kappa is the same density
        # as |kappa| with mu shifted by pi (and lambda negated), see canonical()
        cons = ("identity", "identity", "angle", "angle")
        if variant == "m2":
            names += ("lambda",)
            cons += ("identity",)
        self.param_names = names
        self.constraints = cons

    def _full(self, params):
        p = np.asarray(params, dtype=float)
        return p if p.shape[0] == 5 else np.append(p, 0.0)

    def canonical(self, params) -> np.ndarray:
        """Map to kappa >= 0 via (kappa_j, mu_j, lambda) -> (-kappa_j, mu_j + pi, -lambda)."""
        p = np.array(params, dtype=float)
        for j in (0, 1):
            if p[j] < 0:
                p[j] = -p[j]
                p[2 + j] += np.pi
                if self.variant == "m2":
                    p[4] = -p[4]
        p[2:4] = np.mod(p[2:4], TWO_PI)
        return p

    def batch(self, data, truncation_l=0):
        if data.kind != "unconditional" or data.observations.ndim != 2 or data.observations.shape[1] != 2:
            raise ModelError("von Mises model needs unconditional (n, 2) angle data")
        return (data.observations,)

    def scores(self, batch, params):
        *_, g1, g2, lap = _vm_terms(batch[0], self._full(params))
        return np.column_stack([g1, g2]), lap

    def log_unnorm(self, batch, params):
        k1, k2, m1, m2, lam = self._full(params)
        X = batch[0]
        d1 = X[:, 0] - m1
        d2 = X[:, 1] - m2
        return k1 * np.cos(d1) + k2 * np.cos(d2) + lam * np.sin(d1) * np.sin(d2)

    def w_param_grad(self, batch, params):
        p = self._full(params)
        k1, k2, _, _, lam = p
        S1, C1, S2, C2, g1, g2, _ = _vm_terms(batch[0], p)
        S12 = S1 * S2
        dk1 = 2.0 * g1 * S1 + 2.0 * C1
        dk2 = 2.0 * g2 * S2 + 2.0 * C2
        # derivatives with respect to the centred angles d1, d2; mu enters with a minus sign
        dd1 = 2.0 * g1 * (k1 * C1 + lam * S12) - 2.0 * lam * g2 * C1 * C2 - 2.0 * k1 * S1 + 4.0 * lam * C1 * S2
        dd2 = 2.0 * g2 * (k2 * C2 + lam * S12) - 2.0 * lam * g1 * C1 * C2 - 2.0 * k2 * S2 + 4.0 * lam * S1 * C2
        cols = [dk1, dk2, -dd1, -dd2]
        if self.variant == "m2":
            cols.append(-2.0 * g1 * C1 * S2 - 2.0 * g2 * S1 * C2 + 4.0 * S12)
        return np.column_stack(cols)


def vonmises_score(x, params: VonMisesParams):
    """Gradient (2-vector) and summed Laplacian at one angle pair."""
    p = np.array([params.kappa1, params.kappa2, params.mu1, params.mu2, params.lam])
    *_, g1, g2, lap = _vm_terms(np.asarray(x, dtype=float).reshape(1, 2), p)
    return np.array([g1[0], g2[0]]), float(lap[0])


def vonmises_log_unnorm(x1, x2, params: VonMisesParams):
    d1 = np.asarray(x1) - params.mu1
    d2 = np.asarray(x2) - params.mu2
    return params.kappa1 * np.cos(d1) + params.kappa2 * np.cos(d2) + params.lam * np.sin(d1) * np.sin(d2)


# ---------------------------------------------------------------------------
# Gaussian location oracle
# ---------------------------------------------------------------------------

def gaussian_location_score(x, theta: float, sigma: float):
    if not sigma > 0:
        raise ModelError("sigma must be positive")
    x = np.asarray(x, dtype=float)
    grad = -(x - theta) / sigma ** 2
    lap = np.full_like(grad, -1.0 / sigma ** 2)
    if grad.ndim == 0:
        return float(grad), float(lap)
    return grad, lap


class GaussianLocationModel(ScoreModel):
    """N(theta, sigma^2) with sigma known; the single parameter is theta."""

    kind = "unconditional"
    param_names = ("theta",)

    def __init__(self, sigma: float = 1.0, constraint: str = "identity"):
        if not sigma > 0:
            raise ModelError("sigma must be positive")
        self.sigma = float(sigma)
        self.name = "gaussian-location"
        self.constraints = (constraint,)

    def batch(self, data, truncation_l=0):
        return (super().batch(data, truncation_l)[0].reshape(-1),)

    def scores(self, batch, params):
        grad, lap = gaussian_location_score(batch[0], float(params[0]), self.sigma)
        return grad[:, None], lap

    def log_unnorm(self, batch, params):
        return -0.5 * ((batch[0] - params[0]) / self.sigma) ** 2

    def w_param_grad(self, batch, params):
        return (2.0 * (batch[0] - params[0]) / self.sigma ** 4)[:, None]


class IsotropicGaussianModel(ScoreModel):
    """N(theta, sigma^2 I_d) with sigma known and theta in R^d, so param_dim = d.

    W = -|x - theta|^2 / sigma^4 + 2 d / sigma^2; used where a family with an
    arbitrary parameter dimension is needed (runtime benchmarks).
    """

    kind = "unconditional"

    def __init__(self, dim: int, sigma: float = 1.0):
        if dim < 1:
            raise ModelError("dim must be positive")
        if not sigma > 0:
            raise ModelError("sigma must be positive")
        self.obs_dim = int(dim)
        self.sigma = float(sigma)
        self.name = f"isotropic-gaussian-{dim}"
        self.param_names = tuple(f"theta{j + 1}" for j in range(dim))
        self.constraints = ("identity",) * dim

    def batch(self, data, truncation_l=0):
        obs = super().batch(data, truncation_l)[0]
        return (np.asarray(obs, dtype=float).reshape(-1, self.obs_dim),)

    def scores(self, batch, params):
        X = batch[0]
        grad = -(X - np.asarray(params, dtype=float)) / self.sigma ** 2
        return grad, np.full(X.shape[0], -self.obs_dim / self.sigma ** 2)

    def log_unnorm(self, batch, params):
        return -0.5 * np.sum((batch[0] - np.asarray(params, dtype=float)) ** 2, axis=1) / self.sigma ** 2

    def w_param_grad(self, batch, params):
        return 2.0 * (batch[0] - np.asarray(params, dtype=float)) / self.sigma ** 4


# ---------------------------------------------------------------------------
# family registry
# ---------------------------------------------------------------------------

FAMILIES = ("baker", "ar-baker", "poly-baker", "vonmises")


def build_family(family: str, order: int = 1) -> ScoreModel:
    """Candidate ``order`` of a nested family.

    For the von Mises family order 1 is m1 and order 2 is m2.
    """
    if family == "baker":
        return BakerModel()
    if family == "ar-baker":
        return ArBakerModel(order)
    if family == "poly-baker":
        return PolyBakerModel(order)
    if family == "vonmises":
        if order not in (1, 2):
            raise ModelError("von Mises candidates are 1 (m1) and 2 (m2)")
        return VonMisesModel("m1" if order == 1 else "m2")
    raise ModelError(f"unknown family {family!r}")
