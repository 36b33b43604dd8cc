"""Command-line interface: ``pram perturb|estimate|variance|recover-freq|simulate``.

Exit codes: 0 success, 1 I/O failure, 2 invalid input. Every failure prints
one line ``pram: error[<Code>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import rng
from .core import Dataset, FrequencyVector, PramError, invert_transition, read_matrix_csv
from .estfun import EstimandSpec, build
from .estimators import naive_estimate, oracle_estimate, proposed_estimate, proposed_weights
from .inference import ResampleConfig, plugin_variance, resample_covariance, with_covariance
from .mechanism import perturb_levels, project_simplex, recover_frequencies
from .model_dependent import LatentModelSpec, default_latent_spec, fit_latent_model, model_dependent_estimate
from .simlab import METHODS, SCENARIOS, ScenarioConfig, run_scenario
from .solver import Problem, SolverConfig, WeightScheme

log = logging.getLogger("pram")


class UsageError(Exception):
    code = "UsageError"


def _fail(code: str, message: str, status: int) -> int:
    message = " ".join(str(message).split())
    print(f"pram: error[{code}]: {message}", file=sys.stderr)
    return status


def _read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, encoding="utf-8")


def _need(frame: pd.DataFrame, name: str) -> pd.Series:
    if name not in frame.columns:
        raise UsageError(f"column {name!r} not found in data")
    return frame[name]


def _codes(series: pd.Series, k: int, name: str) -> np.ndarray:
    values = pd.to_numeric(series, errors="coerce").to_numpy(dtype=float)
    if np.any(~np.isfinite(values)) or np.any(values != np.round(values)):
        raise UsageError(f"sensitive column {name!r} must be integer-coded 0..{k - 1} (use --recode)")
    if values.size and (values.min() < 0 or values.max() >= k):
        raise UsageError(f"sensitive column {name!r} has levels outside 0..{k - 1}")
    return values.astype(np.intp)


def _load_spec(text: str) -> EstimandSpec:
    path = Path(text)
    if not text.lstrip().startswith("{"):
        text = path.read_text(encoding="utf-8")
    return EstimandSpec.from_json(text)


def _threads(args) -> int:
    return args.threads if args.threads and args.threads > 0 else (os.cpu_count() or 1)


def _write_json(payload: dict, out) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dataset(frame: pd.DataFrame, spec: EstimandSpec, original: str | None = None) -> Dataset:
    sens = spec.sensitive_column
    if sens is None:
        raise UsageError("the estimand must name its sensitive_column")
    names = [spec.response] if spec.sensitive_role == "covariate" and spec.response else []
    names += [c for c in spec.covariates if c != sens]
    columns = {}
    for name in names:
        values = pd.to_numeric(_need(frame, name), errors="coerce").to_numpy(dtype=float)
        if not np.all(np.isfinite(values)):
            raise UsageError(f"column {name!r} must be numeric without missing values")
        columns[name] = values
    perturbed = _codes(_need(frame, sens), spec.levels, sens)
    orig = _codes(_need(frame, original), spec.levels, original) if original else None
    if not columns:
        columns = {"_": np.zeros(len(frame))}
    return Dataset(columns, k=spec.levels, sensitive_name=sens, original=orig, perturbed=perturbed)


def cmd_perturb(args) -> int:
    seed = rng.seed_from_env(args.seed)
    if seed is None:
        raise UsageError("a seed is required (--seed or PRAM_SEED)")
    frame = _read_csv(args.data)
    P = read_matrix_csv(args.matrix)
    if P.k != args.levels:
        raise UsageError(f"--levels {args.levels} does not match the {P.k}x{P.k} matrix")
    col = _need(frame, args.sensitive)
    mapping = None
    if args.recode:
        labels = sorted(col.astype(str).unique())
        if len(labels) > args.levels:
            raise UsageError(f"column {args.sensitive!r} has {len(labels)} distinct values, more than K={args.levels}")
        mapping = {label: i for i, label in enumerate(labels)}
        levels = col.astype(str).map(mapping).to_numpy(dtype=np.intp)
    else:
        levels = _codes(col, args.levels, args.sensitive)
    released = perturb_levels(levels, P, seed, workers=_threads(args))
    out = frame.copy()
    if mapping is not None:
        inverse = np.array(list(mapping), dtype=object)
        out[f"{args.sensitive}_pram"] = inverse[released]
    else:
        out[f"{args.sensitive}_pram"] = released
    out.to_csv(args.out, index=False, lineterminator="\n")
    summary = {
        "records": int(len(out)),
        "K": P.k,
        "condition_number": P.condition,
        "diagonal": P.diagonal.tolist(),
        "output_column": f"{args.sensitive}_pram",
    }
    if mapping is not None:
        summary["recode"] = mapping
    print(json.dumps(summary, sort_keys=True))
    return 0


def _attach_se(result, data, P, u, weights, how, args, solver_cfg):
    if how == "none" or not result.diagnostics.converged:
        return result, {}
    problem = Problem(data, u, weights)
    extra = {}
    if how in ("plugin", "both"):
        result = with_covariance(result, plugin_variance(data, P, u, result.beta_hat, weights=weights), "plugin", args.level)
        extra["plugin_std_errors"] = result.std_errors.tolist()
    if how in ("resample", "both"):
        seed = rng.seed_from_env(args.seed, 0)
        rcfg = ResampleConfig(M=args.M, seed=seed, workers=_threads(args))
        cov, info = resample_covariance(problem, result.beta_hat, rcfg, solver_cfg)
        result = with_covariance(result, cov, "resample", args.level)
        extra["resample"] = info
        extra["resample_std_errors"] = result.std_errors.tolist()
    return result, extra


def cmd_estimate(args) -> int:
    spec = _load_spec(args.estimand)
    frame = _read_csv(args.data)
    method = args.method
    if method == "oracle" and not args.original:
        raise UsageError("--method oracle needs the original sensitive column (--original COL)")
    data = _dataset(frame, spec, args.original)
    u = build(spec)
    P = read_matrix_csv(args.matrix) if args.matrix else None
    if method in ("proposed", "model1", "model2") and P is None:
        raise UsageError(f"--method {method} needs --matrix")
    scfg = SolverConfig()
    if method == "proposed":
        result = proposed_estimate(data, P, u, scfg, plugin=False, level=args.level)
        weights = proposed_weights(data, P)
    elif method == "naive":
        result = naive_estimate(data, u, scfg, plugin=False, level=args.level)
        weights = WeightScheme.indicator(data.perturbed, u.k, "indicator-perturbed")
    elif method == "oracle":
        result = oracle_estimate(data, u, scfg, plugin=False, level=args.level)
        weights = WeightScheme.indicator(data.original, u.k, "indicator-original")
    else:
        family = args.latent_family
        if args.no_intercept or (method == "model2" and not args.latent_family_given):
            family += "-no-intercept"
        if args.latent_covariates:
            lspec = LatentModelSpec(family, tuple(args.latent_covariates.split(",")), args.latent_target)
        else:
            lspec = default_latent_spec(spec, family, args.latent_target)
        fit = fit_latent_model(data, P, lspec)
        result = model_dependent_estimate(data, P, u, fit, scfg, method=method, level=args.level)
        weights = None
    extra = {}
    if weights is not None:
        result, extra = _attach_se(result, data, P, u, weights, args.with_se, args, scfg)
    payload = result.to_dict()
    payload["n"] = data.n
    payload.update(extra)
    _write_json(payload, args.out)
    return 0


def cmd_variance(args) -> int:
    spec = _load_spec(args.estimand)
    data = _dataset(_read_csv(args.data), spec)
    P = read_matrix_csv(args.matrix)
    u = build(spec)
    scfg = SolverConfig()
    result = proposed_estimate(data, P, u, scfg, plugin=False, level=args.level)
    result, extra = _attach_se(result, data, P, u, proposed_weights(data, P), args.method, args, scfg)
    payload = result.to_dict()
    payload["n"] = data.n
    payload.update(extra)
    _write_json(payload, args.out)
    return 0


def cmd_recover(args) -> int:
    frame = _read_csv(args.data)
    P = read_matrix_csv(args.matrix)
    if P.k != args.levels:
        raise UsageError(f"--levels {args.levels} does not match the {P.k}x{P.k} matrix")
    observed = FrequencyVector.from_levels(_codes(_need(frame, args.sensitive), P.k, args.sensitive), P.k)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rec = recover_frequencies(observed, invert_transition(P))
    payload = {
        "observed": observed.probs.tolist(),
        "recovered": rec.probs.tolist(),
        "out_of_simplex": rec.out_of_simplex,
    }
    if args.project_simplex:
        payload["projected"] = project_simplex(rec.probs).tolist()
    _write_json(payload, args.out)
    return 0


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def cmd_simulate(args) -> int:
    if args.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
    seed = rng.seed_from_env(args.seed, 0)
    kwargs = dict(
        scenario=args.scenario,
        R=args.R,
        M=args.M,
        seed=seed,
        methods=tuple(m for m in args.methods.split(",") if m),
        se_method=args.se,
        grid_step=0.01 if args.full_grid else args.grid_step,
        latent_target=args.latent_target,
        family=args.family,
    )
    if args.n:
        kwargs["n"] = _ints(args.n)
    if args.p:
        kwargs["p"] = _floats(args.p)
    cfg = ScenarioConfig(**kwargs)
    table = run_scenario(cfg, threads=_threads(args))
    table.to_csv(args.out)
    summary_path = args.summary or str(Path(args.out).with_suffix(".json"))
    Path(summary_path).write_text(json.dumps(table.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    failures = table.summary()["failures"]
    print(json.dumps({"cells": len(cfg.cells()), "replicates": cfg.R, "failures": failures, "out": args.out}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pram", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--threads", type=int, default=0, help="worker count (default: logical cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perturb", help="apply PRAM to one categorical column")
    p.add_argument("--data", required=True)
    p.add_argument("--sensitive", required=True)
    p.add_argument("--levels", type=int, required=True)
    p.add_argument("--matrix", required=True, help="K x K CSV, row i / column j = Pr(S*=i | S=j), no header")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--recode", action="store_true", help="map string levels to 0..K-1 in sorted order")
    p.set_defaults(func=cmd_perturb)

    def estimation_args(q):
        q.add_argument("--data", required=True)
        q.add_argument("--matrix")
        q.add_argument("--estimand", required=True, help="estimand JSON (file path or inline)")
        q.add_argument("-M", type=int, default=500, dest="M")
        q.add_argument("--seed", type=int)
        q.add_argument("--level", type=float, default=0.95)
        q.add_argument("--out")

    e = sub.add_parser("estimate", help="estimate a parameter from PRAM-ed data")
    estimation_args(e)
    e.add_argument("--method", choices=METHODS, default="proposed")
    e.add_argument("--original", help="original sensitive column (oracle only)")
    e.add_argument("--with-se", choices=("none", "plugin", "resample", "both"), default="plugin")
    e.add_argument("--latent-family", choices=("logistic", "probit"), default=None)
    e.add_argument("--no-intercept", action="store_true")
    e.add_argument("--latent-target", choices=("released", "latent"), default="released")
    e.add_argument("--latent-covariates", help="comma-separated covariates of the latent model")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("variance", help="variance of the proposed estimator")
    estimation_args(v)
    v.add_argument("--method", choices=("resample", "plugin", "both"), default="resample")
    v.set_defaults(func=cmd_variance)

    r = sub.add_parser("recover-freq", help="recover true-level frequencies")
    r.add_argument("--data", required=True)
    r.add_argument("--sensitive", required=True)
    r.add_argument("--levels", type=int, required=True)
    r.add_argument("--matrix", required=True)
    r.add_argument("--project-simplex", action="store_true")
    r.add_argument("--out")
    r.set_defaults(func=cmd_recover)

    s = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--family", choices=("A", "B"), help="DGP family for --scenario custom")
    s.add_argument("--n", help="comma-separated sample sizes")
    s.add_argument("--p", help="comma-separated p00 = p11 values")
    s.add_argument("-R", type=int, default=2000, dest="R")
    s.add_argument("-M", type=int, default=500, dest="M")
    s.add_argument("--methods", default=",".join(METHODS))
    s.add_argument("--se", choices=("resample", "plugin"), default="resample")
    s.add_argument("--grid-step", type=float, default=0.05)
    s.add_argument("--full-grid", action="store_true", help="0.01 grid step for A2/B2")
    s.add_argument("--latent-target", choices=("released", "latent"), default="released")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--summary", help="JSON summary path (default: <out>.json)")
    s.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if getattr(args, "command", None) == "estimate":
        args.latent_family_given = args.latent_family is not None
        args.latent_family = args.latent_family or "logistic"
    try:
        return args.func(args)
    except (PramError, UsageError) as exc:
        return _fail(exc.code, exc, 2)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        return _fail(type(exc).__name__, exc, 2)
    except OSError as exc:
        return _fail("IOError", exc, 1)


if __name__ == "__main__":
    sys.exit(main())
