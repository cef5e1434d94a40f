"""Replication harness: selection frequencies, estimate tables, penalty
runtime scaling, rolling forecasts and residual moment diagnostics."""
from __future__ import annotations

import hashlib
import json
import math
import time
import timeit
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass
from datetime import datetime, timezone
from typing import Callable

import numpy as np
from scipy import stats

from .core import Dataset, ModelError
from .estimation import FitConfig, FitResult, default_init, fit, pad_params
from .models import (ArBakerParams, BakerParams, IsotropicGaussianModel, PolyBakerParams, VonMisesParams,
                     build_family)
from .selection import MAXIMIZED, MINIMIZED, ScanError, aic_bic_gaussian, apply_criterion, bias_estimate, \
    fit_candidates, mic
from .simulation import (RngStream, sample_baker, sample_standard_baker, sample_vonmises2, simulate_ar_baker,
                         simulate_poly_baker)

SCENARIOS = ("baker_fit", "ar_select", "poly_select", "vonmises_select", "custom")

DEFAULT_TRUTH = {
    "baker_fit": BakerParams(0.3, 0.5, 0.5, 1.5),
    "ar_select": ArBakerParams((0.5, -0.25, 0.1), 3.0, 0.5, 0.5, 1.5),
    "poly_select": PolyBakerParams((-1.5, 2.0, 5.0), 3.0, 0.5, 0.5, 1.5),
    "vonmises_select": VonMisesParams(2.0, 1.0, 1.5, 2.5, 3.0),
}
DEFAULT_K = {"baker_fit": 1, "ar_select": 10, "poly_select": 10, "vonmises_select": 2}
FAMILY = {"baker_fit": "baker", "ar_select": "ar-baker", "poly_select": "poly-baker",
          "vonmises_select": "vonmises"}
# Adam for the plain Baker fit, BFGS elsewhere
DEFAULT_OPTIMIZER = {"baker_fit": "adam", "ar_select": "bfgs", "poly_select": "bfgs",
                     "vonmises_select": "bfgs", "custom": "bfgs"}


class ExperimentError(ValueError):
    """Inconsistent experiment configuration."""


def _params_dict(p) -> dict | None:
    if p is None:
        return None
    if is_dataclass(p):
        d = asdict(p)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
    return {"vector": [float(v) for v in p]}


@dataclass
class ExperimentConfig:
    scenario: str
    sizes: tuple = (1000,)
    replications: int = 100
    criteria: tuple = ("mic1", "mic2")
    master_seed: int = 0
    true_params: object = None
    K: int | None = None
    fit_config: FitConfig | None = None
    # custom scenario hooks: simulator(n, generator) -> Dataset, family name or order -> ScoreModel
    simulator: Callable | None = field(default=None, repr=False)
    family: object = None
    true_order: int | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ExperimentError(f"unknown scenario {self.scenario!r}")
        if self.replications < 1:
            raise ExperimentError("replications must be at least 1")
        self.sizes = tuple(int(n) for n in self.sizes)
        if not self.sizes or any(n <= 0 for n in self.sizes):
            raise ExperimentError("sample sizes must be positive")
        self.criteria = tuple(self.criteria)
        for c in self.criteria:
            if c not in MAXIMIZED + MINIMIZED:
                raise ExperimentError(f"unknown criterion {c!r}")
        if self.scenario == "custom":
            if self.simulator is None or self.family is None or self.true_order is None:
                raise ExperimentError("custom scenario needs simulator, family and true_order")
        else:
            if self.true_params is None:
                self.true_params = DEFAULT_TRUTH[self.scenario]
            if self.family is None:
                self.family = FAMILY[self.scenario]
            if self.true_order is None:
                self.true_order = _true_order(self.scenario, self.true_params)
        if self.K is None:
            self.K = DEFAULT_K.get(self.scenario, self.true_order)
        if self.true_order > self.K:
            raise ExperimentError(f"true order {self.true_order} exceeds candidate range K={self.K}")
        if self.fit_config is None:
            self.fit_config = FitConfig(optimizer=DEFAULT_OPTIMIZER[self.scenario])

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "sizes": list(self.sizes),
            "replications": self.replications,
            "criteria": list(self.criteria),
            "master_seed": self.master_seed,
            "true_params": _params_dict(self.true_params),
            "K": self.K,
            "true_order": self.true_order,
            "family": self.family if isinstance(self.family, str) else getattr(self.family, "__name__", "custom"),
            "fit_config": self.fit_config.as_dict(),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _true_order(scenario, p) -> int:
    if scenario == "ar_select":
        return p.order
    if scenario == "poly_select":
        return p.degree
    if scenario == "vonmises_select":
        return 1 if p.lambda_fixed_zero else 2
    return 1


def simulate_replication(config: ExperimentConfig, n: int, stream_id: int) -> Dataset:
    """Dataset of replication ``stream_id`` at size ``n``; (master_seed, stream_id, n) determine it."""
    g = RngStream(config.master_seed, stream_id).generator()
    p = config.true_params
    if config.scenario == "baker_fit":
        return Dataset.unconditional(sample_baker(n, p, g))
    if config.scenario == "ar_select":
        return simulate_ar_baker(n, p, g)
    if config.scenario == "poly_select":
        return simulate_poly_baker(n, p, g)
    if config.scenario == "vonmises_select":
        return sample_vonmises2(n, p, g)
    return config.simulator(n, g)


def _builder(config: ExperimentConfig):
    fam = config.family
    return (lambda k: build_family(fam, k)) if isinstance(fam, str) else fam


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    config: dict
    kind: str
    frequency: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    excluded: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def frequency_of(self, n: int, criterion: str, k: int) -> int:
        return self.frequency[str(n)][criterion].get(str(k), 0)

    def as_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": self.kind,
            "config": self.config,
            "frequency": self.frequency,
            "estimates": self.estimates,
            "runtime": self.runtime,
            "excluded": self.excluded,
            "records": self.records,
            "metadata": self.metadata,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.as_dict(), **kw)

    def deterministic_view(self) -> dict:
        """Report content without the runtime table and timestamp."""
        d = self.as_dict()
        d.pop("runtime")
        d["metadata"] = {k: v for k, v in d["metadata"].items() if k != "timestamp"}
        d["records"] = [{k: v for k, v in r.items() if k != "seconds"} for r in d["records"]]
        return d

    def to_markdown(self) -> str:
        lines = [f"# {self.kind} experiment: {self.config.get('scenario')}", ""]
        K = self.config.get("K") or 1
        for n, rows in self.frequency.items():
            lines += [f"## n = {n}: selection frequencies", ""]
            head = "| criterion | " + " | ".join(str(k) for k in range(1, K + 1)) + " | excluded |"
            lines += [head, "|" + "---|" * (K + 2)]
            for crit, counts in rows.items():
                cells = " | ".join(str(counts.get(str(k), 0)) for k in range(1, K + 1))
                lines.append(f"| {crit} | {cells} | {self.excluded.get(n, {}).get(crit, 0)} |")
            lines.append("")
        for n, table in self.estimates.items():
            lines += [f"## n = {n}: estimates (mean (SD))", "", "| parameter | mean | SD |", "|---|---|---|"]
            for name, row in table["params"].items():
                sd = "n/a" if row["sd"] is None else f"{row['sd']:.4f}"
                lines.append(f"| {name} | {row['mean']:.4f} | {sd} |")
            lines += ["", f"fits used: {table['used']} of {table['replications']}", ""]
        if self.runtime:
            lines += ["## runtime (seconds)", "", "| n | total | per replication |", "|---|---|---|"]
            for n, row in self.runtime.items():
                lines.append(f"| {n} | {row['total']:.2f} | {row['per_replication']:.3f} |")
            lines.append("")
        return "\n".join(lines)


def _metadata(config: ExperimentConfig) -> dict:
    return {"config_hash": config.config_hash(), "timestamp": datetime.now(timezone.utc).isoformat()}


def _map(fn, args, n_jobs):
    if n_jobs == 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, *zip(*args)))


# ---------------------------------------------------------------------------
# selection experiments
# ---------------------------------------------------------------------------

def _selection_replication(config: ExperimentConfig, n: int, r: int) -> dict:
    t0 = time.perf_counter()
    rec = {"n": n, "replication": r, "master_seed": config.master_seed, "stream_id": r,
           "selected": {}, "errors": {}, "excluded_candidates": [], "warnings": []}
    try:
        data = simulate_replication(config, n, r)
    except ModelError as exc:
        rec["errors"]["simulate"] = str(exc)
        rec["seconds"] = time.perf_counter() - t0
        return rec
    builder = _builder(config)
    gic_crit = [c for c in config.criteria if c in MAXIMIZED]
    if gic_crit:
        try:
            cands, warns, _ = fit_candidates(data, builder, config.K, config.fit_config)
            rec["warnings"] += warns
            rec["excluded_candidates"] = [c.k for c in cands if c.excluded]
            rec["gic"] = {str(c.k): (None if c.excluded else c.gic.value) for c in cands}
            models = {k: builder(k) for k in range(1, config.K + 1)}
            for crit in gic_crit:
                try:
                    scan = apply_criterion(data, cands, crit, models)
                    rec["selected"][crit] = scan.selected_k
                    rec["warnings"] += scan.warnings
                except ScanError as exc:
                    rec["errors"][crit] = str(exc)
        except ScanError as exc:
            for crit in gic_crit:
                rec["errors"][crit] = str(exc)
    for crit in (c for c in config.criteria if c in MINIMIZED):
        try:
            rec["selected"][crit] = aic_bic_gaussian(data, config.K, crit).selected_k
        except ModelError as exc:
            rec["errors"][crit] = str(exc)
    rec["seconds"] = time.perf_counter() - t0
    return rec


def run_selection_experiment(config: ExperimentConfig, n_jobs: int = 1) -> ExperimentReport:
    """Simulate, scan candidates 1..K under every criterion, tabulate selections.

    Replications whose scan fails are recorded and counted as excluded for
    the affected criterion; they never abort the run.
    """
    report = ExperimentReport(config.as_dict(), "selection", metadata=_metadata(config))
    for n in config.sizes:
        t0 = time.perf_counter()
        recs = _map(_selection_replication, [(config, n, r) for r in range(config.replications)], n_jobs)
        report.runtime[str(n)] = {"total": time.perf_counter() - t0,
                                  "per_replication": (time.perf_counter() - t0) / config.replications}
        rows, excl = {}, {}
        for crit in config.criteria:
            counts = Counter(rec["selected"][crit] for rec in recs if crit in rec["selected"])
            rows[crit] = {str(k): counts[k] for k in sorted(counts)}
            excl[crit] = sum(1 for rec in recs if crit not in rec["selected"])
        report.frequency[str(n)] = rows
        report.excluded[str(n)] = excl
        report.records += recs
    return report


# ---------------------------------------------------------------------------
# estimation experiments
# ---------------------------------------------------------------------------

def _estimation_replication(config: ExperimentConfig, n: int, r: int) -> dict:
    t0 = time.perf_counter()
    rec = {"n": n, "replication": r, "master_seed": config.master_seed, "stream_id": r}
    try:
        data = simulate_replication(config, n, r)
        model = _builder(config)(config.true_order)
        L = model.markov_order if data.kind == "timeseries" else None
        cfg = config.fit_config
        init = default_init(data, model, alpha=cfg.init_alpha, k=cfg.init_k, truncation_l=L)
        res = fit(data, model, init, cfg, truncation_l=L)
        rec["params"] = [float(v) for v in res.params_hat]
        rec["param_names"] = list(res.param_names)
        rec["converged"] = res.converged
        rec["message"] = res.message
        rec["gic"] = res.gic_at_opt.value
    except ModelError as exc:
        rec["error"] = str(exc)
        rec["converged"] = False
    rec["seconds"] = time.perf_counter() - t0
    return rec


def summarize_estimates(rows: np.ndarray, names) -> dict:
    """Mean and SD (divisor R - 1) per parameter; SD is None for a single row."""
    rows = np.asarray(rows, dtype=float).reshape(-1, len(names))
    out = {}
    for j, name in enumerate(names):
        col = rows[:, j]
        sd = float(np.std(col, ddof=1)) if col.size > 1 else None
        out[name] = {"mean": float(np.mean(col)) if col.size else float("nan"), "sd": sd}
    return out


def run_estimation_experiment(config: ExperimentConfig, n_jobs: int = 1) -> ExperimentReport:
    """Fit the true model on every replication and tabulate mean/SD per parameter.

    Runs that fail or do not converge are recorded and left out of the table.
    """
    report = ExperimentReport(config.as_dict(), "estimation", metadata=_metadata(config))
    names = _builder(config)(config.true_order).param_names
    for n in config.sizes:
        t0 = time.perf_counter()
        recs = _map(_estimation_replication, [(config, n, r) for r in range(config.replications)], n_jobs)
        report.runtime[str(n)] = {"total": time.perf_counter() - t0,
                                  "per_replication": (time.perf_counter() - t0) / config.replications}
        ok = [rec["params"] for rec in recs if rec.get("converged")]
        report.estimates[str(n)] = {"params": summarize_estimates(np.array(ok), names),
                                    "used": len(ok), "replications": config.replications}
        report.excluded[str(n)] = {"estimation": config.replications - len(ok)}
        report.records += recs
    return report


# ---------------------------------------------------------------------------
# penalty runtime
# ---------------------------------------------------------------------------

def _timed(fn, trials: int, min_trial: float = 0.02) -> float:
    """Median seconds per call over ``trials`` repeats, each looping long enough to last ``min_trial``."""
    timer = timeit.Timer(fn)
    number = 1
    while timer.timeit(number) < min_trial:
        number *= 2
    return float(np.median(timer.repeat(repeat=trials, number=number))) / number


def penalty_runtime_bench(n_grid=(1000, 10000, 100000), param_dims=(3, 5, 8),
                          criteria=("mic2", "gicc"), trials: int = 11, seed: int = 0,
                          min_trial: float = 0.02) -> dict:
    """Median wall time of the penalty computation alone, per (criterion, n, h).

    Each cell fits an isotropic Gaussian location model of dimension h (fit
    time excluded), then times either the MIC factor evaluation or the GICc
    bias estimate.  Returns ``{criterion: {n: {h: seconds}}}``.
    """
    if trials < 11:
        raise ExperimentError("at least 11 trials are required")
    table = {c: {} for c in criteria}
    for n in n_grid:
        for h in param_dims:
            g = RngStream(seed, h).generator()
            data = Dataset.unconditional(g.standard_normal((n, h)))
            model = IsotropicGaussianModel(h)
            res = fit(data, model, np.zeros(h))
            for crit in criteria:
                if crit in ("mic1", "mic2"):
                    gv = res.gic_at_opt
                    sec = _timed(lambda: mic(gv, h, crit), trials, min_trial)
                elif crit == "gicc":
                    sec = _timed(lambda: bias_estimate(data, model, res), trials, min_trial)
                else:
                    raise ExperimentError(f"no penalty benchmark for {crit!r}")
                table[crit].setdefault(n, {})[h] = sec
    return table


# ---------------------------------------------------------------------------
# forecasting
# ---------------------------------------------------------------------------

def ar_forecast(history, a, c: float, m: int) -> np.ndarray:
    """Forecasts 1..m steps ahead with future noise replaced by its mean 0."""
    if m < 1:
        raise ExperimentError("horizon must be at least 1")
    a = np.asarray(a, dtype=float)
    p = a.size
    hist = np.asarray(history, dtype=float)
    if hist.size < p:
        raise ExperimentError("history shorter than the AR order")
    buf = list(hist[hist.size - p:] - c) if p else []
    out = np.empty(m)
    for j in range(m):
        nxt = float(np.dot(a, buf[::-1])) if p else 0.0
        out[j] = c + nxt
        if p:
            buf = buf[1:] + [nxt]
    return out


def _ar_coefs(model_fit) -> tuple[np.ndarray, float]:
    if isinstance(model_fit, ArBakerParams):
        return np.asarray(model_fit.a), model_fit.c
    if isinstance(model_fit, FitResult):
        p = np.asarray(model_fit.params_hat)
        names = model_fit.param_names
        order = sum(1 for nm in names if nm[0] == "a" and nm[1:].isdigit())
        return p[:order], float(p[order])
    a, c = model_fit
    return np.asarray(a, dtype=float), float(c)


def rolling_forecast_mse(series, fits: dict, horizons=(1,), holdout: int = 100,
                         reference: str | None = None) -> dict:
    """Rolling m-step-ahead forecast MSE over the last ``holdout`` points.

    ``fits`` maps a label to a FitResult of an AR-Baker model, ArBakerParams,
    or an ``(a, c)`` pair; fits should be estimated on ``series[:-holdout]``.
    For target index t in the holdout window, the forecast uses data up to
    t - m.  Ratios are MSE / MSE(reference), reference defaulting to the
    first label.
    """
    x = np.asarray(series, dtype=float)
    horizons = tuple(int(m) for m in horizons)
    if any(m < 1 for m in horizons):
        raise ExperimentError("horizon must be at least 1")
    coefs = {name: _ar_coefs(f) for name, f in fits.items()}
    max_p = max(a.size for a, _ in coefs.values())
    if holdout < 1 or holdout > x.size - max_p - 1 - (max(horizons) - 1):
        raise ExperimentError("holdout too long for the series and orders")
    start = x.size - holdout
    mse = {}
    for name, (a, c) in coefs.items():
        mse[name] = {}
        for m in horizons:
            errs = []
            for t in range(start, x.size):
                origin = t - m + 1
                errs.append(x[t] - ar_forecast(x[:origin], a, c, m)[-1])
            mse[name][m] = float(np.mean(np.square(errs)))
    ref = reference or next(iter(fits))
    ratios = {name: {m: mse[name][m] / mse[ref][m] for m in horizons} for name in mse}
    return {"mse": mse, "ratio": ratios, "reference": ref, "holdout": holdout}


# ---------------------------------------------------------------------------
# residual moments
# ---------------------------------------------------------------------------

class MomentError(ValueError):
    """Moments undefined for the given residuals."""


def sample_moments(x) -> tuple[float, float]:
    """(skewness, excess kurtosis) with population-moment normalization."""
    x = np.asarray(x, dtype=float)
    if not np.std(x) > 0:
        raise MomentError("zero-variance residuals")
    return float(stats.skew(x)), float(stats.kurtosis(x))


def residual_bootstrap_moments(residuals, B: int = 1000, rng=None, chunk: int = 100) -> dict:
    """Sample skewness/excess kurtosis with bootstrap SEs from B resamples."""
    r = np.asarray(residuals, dtype=float).reshape(-1)
    if r.size < 8:
        raise MomentError("need at least 8 residuals")
    skew, kurt = sample_moments(r)
    g = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    sk, ku = [], []
    for start in range(0, B, chunk):
        b = min(chunk, B - start)
        res = r[g.integers(0, r.size, size=(b, r.size))]
        sk.append(stats.skew(res, axis=1))
        ku.append(stats.kurtosis(res, axis=1))
    sk = np.concatenate(sk)
    ku = np.concatenate(ku)
    # a resample of identical values has undefined moments
    return {"skewness": skew, "ex_kurtosis": kurt,
            "se_skew": float(np.nanstd(sk, ddof=1)), "se_kurt": float(np.nanstd(ku, ddof=1)), "B": B}


def baker_reference_kurtosis(alpha: float, k: float, n: int = 10000, reps: int = 1000, rng=None) -> dict:
    """Reference excess kurtosis of the standard Baker density by simulation.

    Mean and SD of the sample excess kurtosis over ``reps`` samples of size ``n``.
    """
    g = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    vals = np.array([stats.kurtosis(sample_standard_baker(n, alpha, k, g)) for _ in range(reps)])
    return {"ex_kurtosis": float(vals.mean()), "se": float(vals.std(ddof=1)), "n": n, "reps": reps}


# ---------------------------------------------------------------------------
# rate diagnostic
# ---------------------------------------------------------------------------

def rate_diagnostic(n_pair=(1000, 4000), R: int = 100, master_seed: int = 0, k0: int = 3, K: int = 10,
                    true_params: ArBakerParams | None = None, fit_config: FitConfig | None = None) -> dict:
    """Medians of |log GIC(k0+1) - log GIC(k0)| for AR-Baker data at two sizes.

    Both candidates share the truncation L = K.  The gap is O_p(1/n), so
    quadrupling n should at least halve the median; the verdict allows a
    slack factor 1.5 (ratio <= 0.75).  The verdict is None when
    n_large < 4 n_small.  Replications where either fit fails are skipped.
    """
    if k0 + 1 > K:
        raise ExperimentError(f"k0={k0} leaves no larger candidate within K={K}")
    truth = true_params or DEFAULT_TRUTH["ar_select"]
    if truth.order != k0:
        raise ExperimentError("k0 must equal the true AR order")
    cfg = fit_config or FitConfig()
    n_small, n_large = (int(n) for n in n_pair)
    medians, used = [], []
    for n in (n_small, n_large):
        gaps = []
        for r in range(R):
            data = simulate_ar_baker(n, truth, RngStream(master_seed, r))
            try:
                m0, m1 = build_family("ar-baker", k0), build_family("ar-baker", k0 + 1)
                f0 = fit(data, m0, default_init(data, m0, alpha=cfg.init_alpha, k=cfg.init_k, truncation_l=K),
                         cfg, truncation_l=K)
                if not f0.converged:
                    continue
                f1 = fit(data, m1, pad_params(f0, m1), cfg, truncation_l=K)
                if not f1.converged:
                    continue
            except ModelError:
                continue
            g0, g1 = f0.gic_at_opt.value, f1.gic_at_opt.value
            if g0 > 0 and g1 > 0:
                gaps.append(abs(math.log(g1) - math.log(g0)))
        medians.append(float(np.median(gaps)) if gaps else float("nan"))
        used.append(len(gaps))
    ratio = medians[1] / medians[0]
    verdict = None if n_large < 4 * n_small else bool(ratio <= 0.75)
    return {"n_pair": [n_small, n_large], "medians": medians, "ratio": ratio, "used": used, "passes": verdict}

