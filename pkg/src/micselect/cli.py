"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime or model error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .core import Dataset, ModelError
from .estimation import AdamConfig, BfgsConfig, FitConfig, default_init, fit
from .experiments import (ExperimentConfig, ExperimentError, MomentError, penalty_runtime_bench,
                          residual_bootstrap_moments, rolling_forecast_mse, run_estimation_experiment,
                          run_selection_experiment, sample_moments, simulate_replication)
from .ingest import IngestError, Schema, TransformError, check_finite, ingest_csv, transform_chain
from .models import FAMILIES, build_family
from .selection import MAXIMIZED, MINIMIZED, aic_bic_gaussian, apply_criterion, fit_candidates, mic
from .simulation import write_csv

SCHEMA_VERSION = 1
SEED_ENV = "MICSELECT_SEED"

FAMILY_KIND = {"baker": "unconditional", "ar-baker": "timeseries", "poly-baker": "regression",
               "vonmises": "unconditional"}
DEFAULT_COLUMNS = {"baker": ["y"], "ar-baker": ["x"], "poly-baker": ["x", "y"], "vonmises": ["x1", "x2"]}
SCENARIO_FLAGS = {"baker-fit": "baker_fit", "ar-select": "ar_select", "poly-select": "poly_select",
                  "vonmises-select": "vonmises_select"}


class UsageError(Exception):
    """Bad command line; exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_data_args(p):
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--columns", help="comma-separated column names (defaults depend on the family)")
    p.add_argument("--transform", action="append", default=[],
                   help="log, log_return, standardize or bins_to_radians(B); ':x'/':y' picks a regression "
                        "variable; repeat to chain")


def _add_fit_args(p):
    p.add_argument("--optimizer", choices=("adam", "bfgs"), default="bfgs")
    p.add_argument("--max-iter", type=int, help="iteration budget of the optimizer")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--tol", type=float, help="Adam update tolerance")
    p.add_argument("--grad-tol", type=float, help="BFGS gradient tolerance")
    p.add_argument("--init-alpha", type=float, default=0.25)
    p.add_argument("--init-k", type=float, default=1.0)


def _add_output_args(p):
    p.add_argument("--seed", type=int, help=f"master seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--out", help="JSON report path (default: standard output)")
    p.add_argument("--markdown", help="optional markdown summary path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="micselect", description="Fit unnormalized models by maximum GIC and select "
                                                   "nested candidates with MIC.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit one model by MGICE")
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--order", type=int, default=1, help="AR order or polynomial degree")
    p.add_argument("--variant", choices=("m1", "m2"), default="m2", help="von Mises variant")
    p.add_argument("--bootstrap", type=int, default=0, help="residual moment bootstrap replications")
    _add_data_args(p)
    _add_fit_args(p)
    _add_output_args(p)

    p = sub.add_parser("select", help="scan nested candidates 1..K")
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--max-order", type=int, required=True, help="largest candidate K")
    p.add_argument("--criterion", action="append", choices=MAXIMIZED + MINIMIZED,
                   help="repeatable; default mic2")
    _add_data_args(p)
    _add_fit_args(p)
    _add_output_args(p)

    p = sub.add_parser("simulate", help="run a replication experiment or dump a simulated dataset")
    p.add_argument("--scenario", choices=tuple(SCENARIO_FLAGS), required=True)
    p.add_argument("--n", type=_int_list, required=True, help="sample size(s), comma-separated")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--criterion", action="append", choices=MAXIMIZED + MINIMIZED,
                   help="repeatable; default mic1 and mic2")
    p.add_argument("--max-order", type=int, help="candidate range K")
    p.add_argument("--estimate", action="store_true", help="estimate the true model instead of selecting")
    p.add_argument("--dump-csv", help="write the first replication's dataset to this CSV and stop")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    _add_fit_args(p)
    p.set_defaults(optimizer=None)
    _add_output_args(p)

    p = sub.add_parser("forecast", help="rolling m-step-ahead AR forecasts over a holdout window")
    p.add_argument("--orders", type=_int_list, help="AR orders to compare, comma-separated")
    p.add_argument("--max-order", type=int, help="select orders by scanning 1..K instead")
    p.add_argument("--criterion", action="append", choices=MAXIMIZED,
                   help="with --max-order: criteria whose selections are compared; default mic1, mic2")
    p.add_argument("--horizons", type=_int_list, default=[1])
    p.add_argument("--holdout", type=int, default=100)
    _add_data_args(p)
    _add_fit_args(p)
    _add_output_args(p)

    p = sub.add_parser("bench", help="penalty computation runtime versus n and parameter dimension")
    p.add_argument("--n-grid", type=_int_list, default=[1000, 10000, 100000])
    p.add_argument("--param-dims", type=_int_list, default=[3, 5, 8])
    p.add_argument("--criteria", default="mic2,gicc")
    p.add_argument("--trials", type=int, default=11)
    _add_output_args(p)

    p = sub.add_parser("replay", help="re-run the command echoed in a JSON report")
    p.add_argument("report")
    p.add_argument("--out", help="JSON path for the new report (default: standard output)")
    p.add_argument("--markdown", help="markdown path for the new report")
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def resolve_seed(args) -> tuple[int, str]:
    if args.seed is not None:
        return args.seed, "flag"
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env), f"env:{SEED_ENV}"
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return 0, "default"


def fit_config_from(args) -> FitConfig:
    adam, bfgs = AdamConfig(), BfgsConfig()
    if args.max_iter is not None:
        adam = AdamConfig(**{**vars(adam), "max_iter": args.max_iter})
        bfgs = BfgsConfig(**{**vars(bfgs), "max_iter": args.max_iter})
    if args.lr is not None:
        adam = AdamConfig(**{**vars(adam), "lr": args.lr})
    if args.tol is not None:
        adam = AdamConfig(**{**vars(adam), "tol": args.tol})
    if args.grad_tol is not None:
        bfgs = BfgsConfig(**{**vars(bfgs), "grad_tol": args.grad_tol})
    return FitConfig(optimizer=args.optimizer or "bfgs", adam=adam, bfgs=bfgs,
                     init_alpha=args.init_alpha, init_k=args.init_k)


def load_data(args, family: str):
    cols = args.columns.split(",") if args.columns else DEFAULT_COLUMNS[family]
    cols = tuple(c.strip() for c in cols)
    data = ingest_csv(args.input, Schema(cols, FAMILY_KIND[family]))
    data = transform_chain(data, args.transform)
    check_finite(data)
    return data


def _echo(args, argv) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    return {"command": args.command, "argv": list(argv), "args": cfg}


class Report:
    def __init__(self, args, argv):
        self.body = {"schema_version": SCHEMA_VERSION, "config": _echo(args, argv), "warnings": []}

    def warn(self, msg: str):
        self.body["warnings"].append(msg)
        print(f"warning: {msg}", file=sys.stderr)

    def write(self, args, markdown: str | None = None):
        text = json.dumps(self.body, indent=2, default=_json_default)
        if args.out:
            Path(args.out).write_text(text + "\n", encoding="utf-8")
        else:
            print(text)
        if getattr(args, "markdown", None) and markdown is not None:
            Path(args.markdown).write_text(markdown + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _md_table(headers, rows) -> str:
    out = ["| " + " | ".join(headers) + " |", "|" + "---|" * len(headers)]
    for r in rows:
        out.append("| " + " | ".join(str(v) for v in r) + " |")
    return "\n".join(out)


def _fit_summary(res, n_eff: int, count: int) -> dict:
    d = res.as_dict()
    d["mic1"] = mic(res.gic_at_opt, count, "mic1")
    d["mic2"] = mic(res.gic_at_opt, count, "mic2")
    d["param_count"] = count
    return d


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _model_for(args):
    if args.family == "vonmises":
        return build_family("vonmises", 1 if args.variant == "m1" else 2)
    return build_family(args.family, args.order)


def cmd_fit(args, argv) -> int:
    seed, source = resolve_seed(args)
    report = Report(args, argv)
    report.body["config"]["seed"] = {"value": seed, "source": source}
    data = load_data(args, args.family)
    cfg = fit_config_from(args)
    report.body["config"]["fit_config"] = cfg.as_dict()
    models = [_model_for(args)]
    if args.family == "vonmises":
        # report the nested partner too so m1 and m2 can be compared
        other = "m1" if args.variant == "m2" else "m2"
        models.append(build_family("vonmises", 1 if other == "m1" else 2))
    fits = {}
    for model in models:
        L = model.markov_order if data.kind == "timeseries" else None
        res = fit(data, model, default_init(data, model, alpha=cfg.init_alpha, k=cfg.init_k, truncation_l=L),
                  cfg, truncation_l=L)
        if not res.converged:
            report.warn(f"{model.name}: not converged ({res.message})")
        if res.gic_at_opt.value <= 0:
            report.warn(f"{model.name}: non-positive GIC {res.gic_at_opt.value:.6g}")
        fits[model.name] = (model, res)
    main_model, main_fit = fits[models[0].name]
    report.body["fit"] = _fit_summary(main_fit, main_fit.gic_at_opt.n_effective, main_model.param_count)
    if len(fits) > 1:
        report.body["comparison"] = {name: _fit_summary(r, r.gic_at_opt.n_effective, m.param_count)
                                     for name, (m, r) in fits.items()}
    if hasattr(main_model, "residuals"):
        L = main_model.markov_order if data.kind == "timeseries" else 0
        resid = main_model.residuals(data, main_fit.params_hat, L)
        try:
            if args.bootstrap > 0:
                moments = residual_bootstrap_moments(resid, B=args.bootstrap, rng=seed)
            else:
                skew, kurt = sample_moments(resid)
                moments = {"skewness": skew, "ex_kurtosis": kurt}
            report.body["residual_moments"] = moments
        except MomentError as exc:
            report.warn(str(exc))
    rows = [(nm, f"{v:.6g}") for nm, v in report.body["fit"]["params"].items()]
    md = [f"# fit {main_model.name}", "", _md_table(["parameter", "estimate"], rows), "",
          f"GIC {main_fit.gic_at_opt.value:.6g}, MIC1 {report.body['fit']['mic1']:.6g}, "
          f"MIC2 {report.body['fit']['mic2']:.6g}"]
    if len(fits) > 1:
        md += ["", _md_table(["model", "GIC", "MIC1", "MIC2"],
                             [(k, f"{v['gic']:.6g}", f"{v['mic1']:.6g}", f"{v['mic2']:.6g}")
                              for k, v in report.body["comparison"].items()])]
    report.write(args, "\n".join(md))
    return 0


def _scan(data, family: str, K: int, criteria, cfg, report):
    """Selections per criterion plus the candidate table."""
    out = {}
    gic_crit = [c for c in criteria if c in MAXIMIZED]
    cands = None
    if gic_crit:
        cands, warns, L = fit_candidates(data, family, K, cfg)
        for w in warns:
            report.warn(w)
        models = {k: build_family(family, k) for k in range(1, K + 1)}
        for crit in gic_crit:
            scan = apply_criterion(data, cands, crit, models)
            for w in scan.warnings:
                report.warn(w)
            out[crit] = {"selected": scan.selected_k, "values": scan.values}
    for crit in (c for c in criteria if c in MINIMIZED):
        scan = aic_bic_gaussian(data, K, crit)
        for w in scan.warnings:
            report.warn(w)
        out[crit] = {"selected": scan.selected_k, "values": scan.values,
                     "candidates": [c.as_dict() for c in scan.candidates]}
    return out, cands


def cmd_select(args, argv) -> int:
    if args.max_order < 1:
        raise UsageError("--max-order must be at least 1")
    if args.family == "vonmises" and args.max_order != 2:
        raise UsageError("von Mises candidates are m1 and m2: use --max-order 2")
    if args.family in ("baker", "vonmises") and any(c in MINIMIZED for c in (args.criterion or [])):
        raise UsageError("aic/bic baselines need the ar-baker or poly-baker family")
    seed, source = resolve_seed(args)
    report = Report(args, argv)
    report.body["config"]["seed"] = {"value": seed, "source": source}
    criteria = args.criterion or ["mic2"]
    data = load_data(args, args.family)
    cfg = fit_config_from(args)
    report.body["config"]["fit_config"] = cfg.as_dict()
    results, cands = _scan(data, args.family, args.max_order, criteria, cfg, report)
    report.body["selection"] = results
    if cands is not None:
        report.body["candidates"] = [c.as_dict() for c in cands]
    K = args.max_order
    rows = [(crit, r["selected"], *[("-" if r["values"].get(k) is None else f"{r['values'][k]:.6g}")
                                    for k in range(1, K + 1)]) for crit, r in results.items()]
    md = ["# selection", "", _md_table(["criterion", "selected", *[str(k) for k in range(1, K + 1)]], rows)]
    report.write(args, "\n".join(md))
    return 0


def cmd_simulate(args, argv) -> int:
    seed, source = resolve_seed(args)
    scenario = SCENARIO_FLAGS[args.scenario]
    criteria = tuple(args.criterion or ("mic1", "mic2"))
    opt = args.optimizer
    cfg = None
    if opt is not None or any(v is not None for v in (args.max_iter, args.lr, args.tol, args.grad_tol)) \
            or (args.init_alpha, args.init_k) != (0.25, 1.0):
        if opt is None:
            args.optimizer = "adam" if scenario == "baker_fit" else "bfgs"
        cfg = fit_config_from(args)
    config = ExperimentConfig(scenario, sizes=tuple(args.n), replications=args.reps, criteria=criteria,
                              master_seed=seed, K=args.max_order, fit_config=cfg)
    if args.dump_csv:
        data = simulate_replication(config, config.sizes[0], 0)
        write_csv(data, args.dump_csv)
        report = Report(args, argv)
        report.body["config"]["seed"] = {"value": seed, "source": source}
        report.body["dump"] = {"path": args.dump_csv, "n": config.sizes[0], "master_seed": seed, "stream_id": 0}
        if args.out:
            report.write(args)
        return 0
    if scenario == "baker_fit" or args.estimate:
        exp = run_estimation_experiment(config, n_jobs=args.jobs)
    else:
        exp = run_selection_experiment(config, n_jobs=args.jobs)
    report = Report(args, argv)
    report.body["config"]["seed"] = {"value": seed, "source": source}
    report.body["experiment"] = exp.as_dict()
    for rec in exp.records:
        for w in rec.get("warnings", []):
            report.body["warnings"].append(f"replication {rec['replication']} (n={rec['n']}): {w}")
    n_warn = len(report.body["warnings"])
    if n_warn:
        print(f"warning: {n_warn} replication warnings recorded in the report", file=sys.stderr)
    report.write(args, exp.to_markdown())
    return 0


def cmd_forecast(args, argv) -> int:
    if (args.orders is None) == (args.max_order is None):
        raise UsageError("give exactly one of --orders or --max-order")
    seed, source = resolve_seed(args)
    report = Report(args, argv)
    report.body["config"]["seed"] = {"value": seed, "source": source}
    data = load_data(args, "ar-baker")
    cfg = fit_config_from(args)
    report.body["config"]["fit_config"] = cfg.as_dict()
    if data.n_raw <= args.holdout + 2:
        raise ModelError("series too short for the holdout window")
    train = Dataset.timeseries(data.observations[:-args.holdout])
    fits = {}
    if args.orders is not None:
        for p in args.orders:
            model = build_family("ar-baker", p)
            res = fit(train, model, default_init(train, model, alpha=cfg.init_alpha, k=cfg.init_k), cfg)
            if not res.converged:
                report.warn(f"AR({p}) fit did not converge: {res.message}")
            fits[f"AR({p})"] = res
    else:
        criteria = args.criterion or ["mic1", "mic2"]
        results, cands = _scan(train, "ar-baker", args.max_order, criteria, cfg, report)
        report.body["selection"] = {c: {"selected": r["selected"]} for c, r in results.items()}
        for crit, r in results.items():
            fits[f"AR({r['selected']}) ({crit})"] = cands[r["selected"] - 1].fit
    table = rolling_forecast_mse(data.observations, fits, args.horizons, args.holdout)
    report.body["forecast"] = table
    report.body["fits"] = {k: f.as_dict() for k, f in fits.items()}
    rows = [(name, *[f"{table['mse'][name][m]:.6g} ({table['ratio'][name][m]:.3f})" for m in args.horizons])
            for name in fits]
    md = ["# rolling forecast MSE (ratio to first model)", "",
          _md_table(["model", *[f"m={m}" for m in args.horizons]], rows)]
    report.write(args, "\n".join(md))
    return 0


def cmd_bench(args, argv) -> int:
    seed, source = resolve_seed(args)
    criteria = tuple(c.strip() for c in args.criteria.split(",") if c.strip())
    for c in criteria:
        if c not in ("mic1", "mic2", "gicc"):
            raise UsageError(f"no penalty benchmark for {c!r}")
    if args.trials < 11:
        raise UsageError("--trials must be at least 11 (timings are medians)")
    report = Report(args, argv)
    report.body["config"]["seed"] = {"value": seed, "source": source}
    table = penalty_runtime_bench(args.n_grid, args.param_dims, criteria, trials=args.trials, seed=seed)
    report.body["runtime"] = {c: {str(n): {str(h): t for h, t in row.items()} for n, row in rows.items()}
                              for c, rows in table.items()}
    md = ["# penalty runtime (median seconds)", ""]
    for c, rows in table.items():
        md += [f"## {c}", "", _md_table(["n", *[f"h={h}" for h in args.param_dims]],
                                       [(n, *[f"{row[h]:.3g}" for h in args.param_dims])
                                        for n, row in rows.items()]), ""]
    report.write(args, "\n".join(md))
    return 0


def _strip_outputs(argv: list) -> list:
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok in ("--out", "--markdown", "--dump-csv"):
            skip = True
            continue
        if tok.startswith(("--out=", "--markdown=", "--dump-csv=")):
            continue
        out.append(tok)
    return out


def replay_argv(body: dict, out: str | None = None, markdown: str | None = None) -> list:
    """Command line regenerating a report: echoed argv with the resolved seed pinned."""
    cfg = body["config"]
    argv = _strip_outputs(list(cfg["argv"]))
    seed = cfg.get("seed", {}).get("value")
    if seed is not None and not any(t == "--seed" or t.startswith("--seed=") for t in argv):
        argv += ["--seed", str(seed)]
    if out:
        argv += ["--out", out]
    if markdown:
        argv += ["--markdown", markdown]
    return argv


def cmd_replay(args, argv) -> int:
    try:
        body = json.loads(Path(args.report).read_text(encoding="utf-8"))
        new = replay_argv(body, args.out, args.markdown)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise IngestError(f"{args.report}: not a report with an echoed command ({exc})") from exc
    if new and new[0] == "replay":
        raise UsageError("refusing to replay a replay report")
    return main(new)


COMMANDS = {"fit": cmd_fit, "select": cmd_select, "simulate": cmd_simulate, "forecast": cmd_forecast,
            "bench": cmd_bench, "replay": cmd_replay}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"micselect: error: {exc}", file=sys.stderr)
        return 1
    except (ModelError, IngestError, TransformError, ExperimentError, MomentError, np.linalg.LinAlgError,
            OSError) as exc:
        print(f"micselect: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
