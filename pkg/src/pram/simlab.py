"""Monte Carlo scenarios for the PRAM estimators.

Scenario A: binary sensitive response, ``y | x ~ Bernoulli(expit(-1 + 1.5 x))``
with ``x ~ Normal(0.5, 1)``; the estimand is the logistic-regression
coefficient vector. Scenario B: binary sensitive covariate,
``x ~ Bernoulli(0.5)`` and ``y | x ~ Normal(-1 + x, 1)``; the estimand is the
least-squares coefficient vector. ``*1`` scenarios sweep ``n`` with
``p00 = p11``; ``*2`` scenarios fix ``n = 1000`` and sweep a ``(p00, p11)``
grid.

Every replicate draws from streams keyed by ``(seed, cell, replicate)``, so
metrics do not depend on the number of worker processes.
"""

from __future__ import annotations

import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import norm

from . import rng
from .core import Dataset, PramError, TransitionMatrix
from .estfun import EstimandSpec, build
from .estimators import naive_estimate, oracle_estimate, proposed_estimate, proposed_weights
from .inference import ResampleConfig, TooManyFailures, resample_covariance, with_covariance
from .mechanism import perturb
from .model_dependent import default_latent_spec, fit_latent_model, model_dependent_estimate
from .solver import Problem, SolverConfig

log = logging.getLogger(__name__)

SCENARIOS = ("A1", "A2", "B1", "B2", "custom")
METHODS = ("proposed", "oracle", "naive", "model1", "model2")
SWEEP_N = (1000, 1200, 1400, 1600, 1800, 2000)
SWEEP_P = (0.75, 0.85, 0.95)
GRID_N = 1000


class ZeroDenominator(PramError):
    code = "ZeroDenominator"


@dataclass(frozen=True)
class Cell:
    index: int
    n: int
    p00: float
    p11: float

    @property
    def matrix(self) -> TransitionMatrix:
        return TransitionMatrix.symmetric_binary(self.p00, self.p11)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "A1"
    n: tuple[int, ...] = SWEEP_N
    p: tuple[float, ...] = SWEEP_P
    R: int = 2000
    seed: int = 0
    methods: tuple[str, ...] = METHODS
    M: int = 500
    se_method: str = "resample"  # proposed-method SEs: resample | plugin
    grid_step: float = 0.05
    grid_range: tuple[float, float] = (0.75, 0.95)
    # "custom" selects the DGP family ("A" or "B") plus explicit cells
    family: str | None = None
    beta_true: tuple[float, float] | None = None
    latent_target: str = "released"
    level: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "n", tuple(int(v) for v in np.atleast_1d(self.n)))
        object.__setattr__(self, "p", tuple(float(v) for v in np.atleast_1d(self.p)))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.scenario == "custom" and self.family not in ("A", "B"):
            raise ValueError("custom scenarios need family 'A' or 'B'")
        if min(self.n) < 100:
            raise ValueError("n must be at least 100")
        if self.R < 1:
            raise ValueError("R must be at least 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        if self.se_method not in ("resample", "plugin"):
            raise ValueError(f"unknown se_method {self.se_method!r}")
        for v in self.p + tuple(self.grid_range):
            if not 0.5 < v <= 1.0:
                raise ValueError("transition probabilities must lie in (0.5, 1]")

    @property
    def dgp(self) -> str:
        return self.family if self.scenario == "custom" else self.scenario[0]

    @property
    def truth(self) -> np.ndarray:
        if self.beta_true is not None:
            return np.array(self.beta_true, dtype=float)
        return np.array([-1.0, 1.5]) if self.dgp == "A" else np.array([-1.0, 1.0])

    @property
    def estimand(self) -> EstimandSpec:
        if self.dgp == "A":
            return EstimandSpec("logistic", response="y", covariates=("x",), sensitive_column="y")
        return EstimandSpec(
            "linear", response="y", covariates=("x",), sensitive_role="covariate", sensitive_column="x"
        )

    def cells(self) -> list[Cell]:
        if self.scenario in ("A2", "B2"):
            lo, hi = self.grid_range
            steps = int(round((hi - lo) / self.grid_step))
            grid = np.round(lo + self.grid_step * np.arange(steps + 1), 10)
            pairs = [(GRID_N, a, b) for a in grid for b in grid]
        else:
            pairs = [(n, p, p) for p in self.p for n in self.n]
        return [Cell(i, n, float(a), float(b)) for i, (n, a, b) in enumerate(pairs)]


def generate_replicate(cfg: ScenarioConfig, replicate: int, cell: Cell | None = None) -> Dataset:
    """One simulated dataset with both original and PRAM-ed sensitive columns."""
    cell = cell or cfg.cells()[0]
    g = rng.generator(cfg.seed, rng.REPLICATE_TAG, cell.index, replicate)
    b0, b1 = cfg.truth
    n = cell.n
    if cfg.dgp == "A":
        x = g.normal(0.5, 1.0, n)
        y = (g.random(n) < expit(b0 + b1 * x)).astype(np.intp)
        data = Dataset({"x": x}, k=2, sensitive_name="y", original=y)
    else:
        x = (g.random(n) < 0.5).astype(np.intp)
        y = b0 + b1 * x + g.standard_normal(n)
        data = Dataset({"y": y}, k=2, sensitive_name="x", original=x)
    seed = rng.child_seed(cfg.seed, rng.PERTURB_TAG, cell.index, replicate)
    return perturb(data, cell.matrix, seed)


def _one_replicate(cfg: ScenarioConfig, cell: Cell, replicate: int) -> dict:
    """Estimates and SEs of every requested method on one replicate."""
    data = generate_replicate(cfg, replicate, cell)
    spec = cfg.estimand
    u = build(spec)
    P = cell.matrix
    scfg = SolverConfig()
    d = u.d
    out = {}
    for method in cfg.methods:
        beta = np.full(d, np.nan)
        se = np.full(d, np.nan)
        try:
            if method == "proposed":
                res = proposed_estimate(data, P, u, scfg)
                if res.diagnostics.converged and cfg.se_method == "resample":
                    rcfg = ResampleConfig(
                        M=cfg.M, seed=rng.child_seed(cfg.seed, rng.RESAMPLE_TAG, cell.index, replicate)
                    )
                    cov, _ = resample_covariance(Problem(data, u, proposed_weights(data, P)), res.beta_hat, rcfg, scfg)
                    res = with_covariance(res, cov, "resample", cfg.level)
            elif method == "oracle":
                res = oracle_estimate(data, u, scfg)
            elif method == "naive":
                res = naive_estimate(data, u, scfg)
            else:
                family = "logistic" if method == "model1" else "logistic-no-intercept"
                fit = fit_latent_model(data, P, default_latent_spec(spec, family, cfg.latent_target))
                res = model_dependent_estimate(data, P, u, fit, scfg, method=method)
            if res.diagnostics.converged:
                beta = res.beta_hat
                if res.std_errors is not None:
                    se = res.std_errors
        except (PramError, TooManyFailures, np.linalg.LinAlgError) as exc:
            log.debug("replicate %d cell %d method %s failed: %s", replicate, cell.index, method, exc)
        out[method] = (beta, se)
    return out


def _run_block(args) -> list[dict]:
    cfg, cell, reps = args
    return [_one_replicate(cfg, cell, r) for r in reps]


@dataclass
class MetricsTable:
    """Tidy metrics: one row per cell x method x coordinate.

    ``estimates[(cell_index, method)]`` keeps the raw (R, d) estimates and
    standard errors behind the summary rows.
    """

    config: ScenarioConfig
    frame: pd.DataFrame
    estimates: dict = field(default_factory=dict, repr=False)

    def rows(self, method: str, **where) -> pd.DataFrame:
        f = self.frame[self.frame.method == method]
        for key, value in where.items():
            f = f[np.isclose(f[key], value)] if isinstance(value, float) else f[f[key] == value]
        return f

    def metric(self, method: str, name: str, **where) -> np.ndarray:
        return self.rows(method, **where).sort_values("coord")[name].to_numpy()

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        self.frame.to_csv(buf, index=False, float_format="%.10g", lineterminator="\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        cfg = asdict(self.config)
        return {
            "config": cfg,
            "cells": len(self.config.cells()),
            "failures": {
                m: int(self.frame[(self.frame.method == m) & (self.frame.coord == 0)].failures.sum())
                for m in self.config.methods
            },
            "metrics": json.loads(self.frame.to_json(orient="records", double_precision=10)),
        }


def _summarise(cfg: ScenarioConfig, cell: Cell, method: str, beta: np.ndarray, se: np.ndarray) -> list[dict]:
    truth = cfg.truth
    ok = np.all(np.isfinite(beta), axis=1)
    b = beta[ok]
    s = se[ok]
    R_ok = int(ok.sum())
    rows = []
    crit = norm.ppf(0.5 + cfg.level / 2.0)
    for j in range(beta.shape[1]):
        err = b[:, j] - truth[j]
        bias = float(err.mean()) if R_ok else np.nan
        sd = float(b[:, j].std(ddof=1)) if R_ok > 1 else np.nan
        mse = float(np.mean(err**2)) if R_ok else np.nan
        have_se = np.isfinite(s[:, j]) if R_ok else np.zeros(0, bool)
        se_mean = float(s[have_se, j].mean()) if have_se.any() else np.nan
        if R_ok > 1 and have_se.all():
            cp = float(np.mean(np.abs(err) <= crit * s[:, j]))
        else:
            cp = np.nan
        rows.append(
            {
                "scenario": cfg.scenario,
                "cell": cell.index,
                "n": cell.n,
                "p00": cell.p00,
                "p11": cell.p11,
                "method": method,
                "coord": j,
                "truth": float(truth[j]),
                "R": beta.shape[0],
                "ok": R_ok,
                "failures": beta.shape[0] - R_ok,
                "bias": bias,
                "sd": sd,
                "se": se_mean,
                "cp": cp,
                "mse": mse,
            }
        )
    return rows


def run_scenario(cfg: ScenarioConfig, threads: int = 1, block: int = 25) -> MetricsTable:
    """Run every cell of ``cfg`` and aggregate Bias/SD/SE/CP/MSE/RE.

    Per-replicate failures are counted, never raised. With ``threads > 1``
    replicate blocks run in worker processes; results are reassembled in
    (cell, replicate) order so the table is identical to a serial run.
    """
    cells = cfg.cells()
    tasks = [(cfg, c, range(s, min(s + block, cfg.R))) for c in cells for s in range(0, cfg.R, block)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(_run_block, tasks))
    else:
        blocks = [_run_block(t) for t in tasks]
    per_cell: dict[int, list[dict]] = {c.index: [] for c in cells}
    for (_, cell, _), res in zip(tasks, blocks):
        per_cell[cell.index].extend(res)
    rows = []
    estimates = {}
    for cell in cells:
        reps = per_cell[cell.index]
        for method in cfg.methods:
            beta = np.array([r[method][0] for r in reps])
            se = np.array([r[method][1] for r in reps])
            estimates[(cell.index, method)] = (beta, se)
            rows.extend(_summarise(cfg, cell, method, beta, se))
    frame = pd.DataFrame(rows)
    ref = "model1" if "model1" in cfg.methods else None
    if ref is not None:
        refs = frame[frame.method == ref].set_index(["cell", "coord"]).mse
        denom = refs.reindex(pd.MultiIndex.from_frame(frame[["cell", "coord"]])).to_numpy()
        with np.errstate(divide="ignore", invalid="ignore"):
            frame["re_model1"] = np.where(denom > 0, frame.mse.to_numpy() / denom, np.nan)
    return MetricsTable(cfg, frame, estimates)


def relative_efficiency(table: MetricsTable, method_a: str, method_b: str) -> pd.DataFrame:
    """Per-cell MSE ratio of ``method_a`` to ``method_b``.

    Columns ``re_<coord>`` hold the per-coordinate ratios and ``re_sum``
    the ratio of summed MSEs.
    """
    f = table.frame
    a = f[f.method == method_a].set_index(["cell", "coord"]).mse
    b = f[f.method == method_b].set_index(["cell", "coord"]).mse
    if a.empty or b.empty:
        raise ValueError(f"methods {method_a!r} and {method_b!r} must both be in the table")
    if not a.index.equals(b.index):
        raise ValueError("methods cover different cells")
    if np.any(b.to_numpy() == 0.0) or b.isna().any():
        raise ZeroDenominator(f"MSE of {method_b!r} is zero or undefined in some cell")
    ratio = (a / b).unstack("coord")
    ratio.columns = [f"re_{c}" for c in ratio.columns]
    ratio["re_sum"] = a.groupby(level="cell").sum() / b.groupby(level="cell").sum()
    cells = f[f.coord == 0].drop_duplicates("cell").set_index("cell")[["n", "p00", "p11"]]
    return cells.join(ratio).reset_index()
