"""Seedable samplers for the Baker, AR-Baker, polynomial-Baker and bivariate
von Mises data-generating processes."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .core import Dataset, ModelError
from .models import TWO_PI, ArBakerParams, BakerParams, PolyBakerParams, VonMisesParams, baker_acceptance


class StationarityError(ModelError):
    """AR coefficients outside the stationary region."""


@dataclass(frozen=True)
class RngStream:
    """One independent stream per (master_seed, stream_id)."""

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(self.master_seed), int(self.stream_id)]))


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_standard_baker(n: int, alpha: float, k: float, rng, stats: dict | None = None) -> np.ndarray:
    """Draws from exp(-alpha z^2 / 2) / (1 + z^2)^k by acceptance-rejection.

    Proposals are N(0, 1/alpha); a proposal z is kept with probability
    (1 + z^2)^-k, which never exceeds one for k > 0.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if not (alpha > 0 and k > 0):
        raise ModelError("alpha and k must be positive")
    g = _rng(rng)
    out = np.empty(n)
    filled = 0
    proposed = 0
    sd = 1.0 / np.sqrt(alpha)
    while filled < n:
        need = n - filled
        m = max(64, int(need * 1.2 / 0.2) + 16)
        z = g.normal(0.0, sd, size=m)
        acc = baker_acceptance(z, k)
        assert np.all(acc <= 1.0)
        keep = z[g.random(m) < acc]
        take = min(need, keep.size)
        out[filled: filled + take] = keep[:take]
        filled += take
        proposed += m
    if stats is not None:
        stats["proposed"] = stats.get("proposed", 0) + proposed
        stats["accepted"] = stats.get("accepted", 0) + n
    return out


def sample_baker(n: int, params: BakerParams, rng) -> np.ndarray:
    return params.mu + params.s * sample_standard_baker(n, params.alpha, params.k, rng)


def ar_companion_radius(a) -> float:
    a = np.asarray(a, dtype=float)
    p = a.size
    comp = np.zeros((p, p))
    comp[0, :] = a
    if p > 1:
        comp[1:, :-1] = np.eye(p - 1)
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def simulate_ar_baker(n_keep: int, params: ArBakerParams, rng, burn_in: int = 200) -> Dataset:
    """x_t = c + sum_j a_j (x_{t-j} - c) + s eps_t with Baker(0, 1, alpha, k) noise.

    Initial lags are set to c and the first ``burn_in`` values are dropped.
    """
    if ar_companion_radius(params.a) >= 1.0 - 1e-8:
        raise StationarityError(f"AR coefficients {params.a} are not stationary")
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    g = _rng(rng)
    stats: dict = {}
    total = n_keep + burn_in
    eps = sample_standard_baker(total, params.alpha, params.k, g, stats)
    # centred recursion y_t = sum_j a_j y_{t-j} + s eps_t from zero initial lags
    y = lfilter([1.0], np.concatenate([[1.0], -np.asarray(params.a)]), params.s * eps)
    x = params.c + y[burn_in:]
    return Dataset.timeseries(x, acceptance_rate=stats["accepted"] / stats["proposed"], burn_in=burn_in)


DESIGN_HALF_WIDTH = 2.0


def uniform_design(n: int, rng, half_width: float = DESIGN_HALF_WIDTH) -> np.ndarray:
    """Default predictor design: IID uniform on [-half_width, half_width]."""
    return _rng(rng).uniform(-half_width, half_width, size=n)


def simulate_poly_baker(n: int, params: PolyBakerParams, rng, design=None) -> Dataset:
    """y_i = sum_j beta_j x_i^j + c + s eps_i with Baker errors.

    ``design`` is an array of predictors or a callable ``(n, generator) -> x``;
    the default draws x uniformly on [-2, 2].
    """
    g = _rng(rng)
    if design is None:
        x = uniform_design(n, g)
    elif callable(design):
        x = np.asarray(design(n, g), dtype=float)
    else:
        x = np.asarray(design, dtype=float)
    if not np.all(np.isfinite(x)) or x.shape != (n,):
        raise ModelError("design must produce n finite predictors")
    stats: dict = {}
    eps = sample_standard_baker(n, params.alpha, params.k, g, stats)
    y = params.mean(x) + params.s * eps
    return Dataset.regression(x, y, acceptance_rate=stats["accepted"] / stats["proposed"])


def vonmises_exponent(x1, x2, params: VonMisesParams):
    d1 = np.asarray(x1) - params.mu1
    d2 = np.asarray(x2) - params.mu2
    return params.kappa1 * np.cos(d1) + params.kappa2 * np.cos(d2) + params.lam * np.sin(d1) * np.sin(d2)


def vonmises_acceptance(x1, x2, params: VonMisesParams):
    """exp(exponent - (kappa1 + kappa2 + |lambda|)), at most one."""
    bound = params.kappa1 + params.kappa2 + abs(params.lam)
    return np.exp(vonmises_exponent(x1, x2, params) - bound)


def sample_vonmises2(n: int, params: VonMisesParams, rng) -> Dataset:
    """Acceptance-rejection from uniform proposals on [0, 2pi)^2."""
    g = _rng(rng)
    out = np.empty((n, 2))
    filled = 0
    proposed = 0
    while filled < n:
        need = n - filled
        m = max(256, need * 8)
        u = g.uniform(0.0, TWO_PI, size=(m, 2))
        acc = vonmises_acceptance(u[:, 0], u[:, 1], params)
        assert np.all(acc <= 1.0 + 1e-12)
        keep = u[g.random(m) < acc]
        take = min(need, keep.shape[0])
        out[filled: filled + take] = keep[:take]
        filled += take
        proposed += m
    return Dataset.unconditional(out, acceptance_rate=n / proposed)


# ---------------------------------------------------------------------------
# CSV dump
# ---------------------------------------------------------------------------

DEFAULT_COLUMNS = {
    "timeseries": ("x",),
    "regression": ("x", "y"),
}


def dataset_columns(data: Dataset) -> tuple:
    if data.kind in DEFAULT_COLUMNS:
        return DEFAULT_COLUMNS[data.kind]
    obs = data.observations
    if obs.ndim == 1:
        return ("y",)
    return tuple(f"x{j + 1}" for j in range(obs.shape[1]))


def write_csv(data: Dataset, path, columns: tuple | None = None) -> Path:
    """One column per variable with a header row; floats written round-trip exact."""
    path = Path(path)
    cols = columns or dataset_columns(data)
    obs = data.observations.reshape(data.n_raw, -1)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in obs:
            w.writerow([repr(float(v)) for v in row])
    return path
