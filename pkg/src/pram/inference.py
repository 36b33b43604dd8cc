"""Variance estimation and confidence intervals.

Two routes to the covariance of an estimating-equation root:

* multiplier resampling: re-solve the equation with every record's
  contribution scaled by an iid mean-one, variance-one weight and take the
  sample covariance of the re-solved roots;
* plug-in sandwich ``Omega^-1 [(1/n) sum phi phi'] Omega^-T / n``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.stats import norm

from . import rng
from .core import Dataset, EstimateResult, PramError, TransitionMatrix, invert_transition
from .estfun import EstimatingFunction
from .solver import Problem, SolverConfig, SolverError, WeightScheme, invert_omega, newton

MAX_FAILURE_RATE = 0.05


class TooManyFailures(PramError):
    code = "TooManyFailures"


def _exponential(g: np.random.Generator, n: int) -> np.ndarray:
    return g.standard_exponential(n)


def _poisson(g: np.random.Generator, n: int) -> np.ndarray:
    return g.poisson(1.0, n).astype(float)


def _constant(g: np.random.Generator, n: int) -> np.ndarray:
    return np.ones(n)


MULTIPLIERS: dict[str, Callable[[np.random.Generator, int], np.ndarray]] = {
    "exponential": _exponential,
    "poisson": _poisson,
}


@dataclass(frozen=True)
class ResampleConfig:
    M: int = 500
    law: str = "exponential"
    seed: int = 0
    workers: int = 1
    # test hook: permits the variance-zero "constant" law
    allow_degenerate: bool = False

    def __post_init__(self):
        if self.M < 50:
            raise ValueError("perturbation resampling needs M >= 50")
        if self.law == "constant":
            if not self.allow_degenerate:
                raise ValueError("the constant multiplier law has variance 0")
        elif self.law not in MULTIPLIERS:
            raise ValueError(f"unknown multiplier law {self.law!r}")

    def draw(self, m: int, n: int) -> np.ndarray:
        law = _constant if self.law == "constant" else MULTIPLIERS[self.law]
        return law(rng.generator(self.seed, rng.RESAMPLE_TAG, m), n)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def sandwich(terms: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Covariance of the root from per-record terms and average Jacobian."""
    n = terms.shape[0]
    inv = invert_omega(omega)
    meat = terms.T @ terms / n
    return _sym(inv @ meat @ inv.T / n)


def resample_covariance(
    problem: Problem,
    beta_hat,
    cfg: ResampleConfig,
    solver_cfg: SolverConfig | None = None,
) -> tuple[np.ndarray, dict]:
    solver_cfg = solver_cfg or SolverConfig()
    beta_hat = np.asarray(beta_hat, dtype=float)

    def one(m: int):
        L = cfg.draw(m, problem.n)
        try:
            beta, diag = newton(problem.reweighted(problem.weights.scaled(L)), beta_hat, solver_cfg)
        except SolverError:
            return None
        return beta if diag.converged else None

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            sols = list(pool.map(one, range(cfg.M)))
    else:
        sols = [one(m) for m in range(cfg.M)]
    kept = [s for s in sols if s is not None]
    failures = cfg.M - len(kept)
    if failures > MAX_FAILURE_RATE * cfg.M:
        raise TooManyFailures(f"{failures} of {cfg.M} resampled equations failed to solve")
    draws = np.array(kept)
    cov = _sym(np.atleast_2d(np.cov(draws, rowvar=False, ddof=1)))
    return cov, {"M": cfg.M, "failures": failures, "law": cfg.law}


def resample_variance(
    data: Dataset,
    p: TransitionMatrix | None,
    u: EstimatingFunction,
    beta_hat,
    cfg: ResampleConfig | None = None,
    solver_cfg: SolverConfig | None = None,
    *,
    weights: WeightScheme | None = None,
) -> np.ndarray:
    """Covariance of ``beta_hat`` by multiplier resampling.

    By default the equation is the inverse-transition one behind the
    proposed estimator; pass ``weights`` to assess another estimator.
    Resample ``m`` draws its multipliers from the stream keyed
    ``(cfg.seed, m)`` and is warm-started at ``beta_hat``.
    """
    cfg = cfg or ResampleConfig()
    if weights is None:
        weights = WeightScheme.inverse_transition(invert_transition(p), data.sensitive("perturbed"))
    cov, _ = resample_covariance(Problem(data, u, weights), beta_hat, cfg, solver_cfg)
    return cov


def plugin_variance(
    data: Dataset,
    p: TransitionMatrix | None,
    u: EstimatingFunction,
    beta_hat,
    solver_cfg: SolverConfig | None = None,
    *,
    weights: WeightScheme | None = None,
) -> np.ndarray:
    if weights is None:
        weights = WeightScheme.inverse_transition(invert_transition(p), data.sensitive("perturbed"))
    problem = Problem(data, u, weights)
    beta_hat = np.asarray(beta_hat, dtype=float)
    _, omega = problem.score_jac(beta_hat, solver_cfg or SolverConfig())
    return sandwich(problem.terms(beta_hat), omega)


def confidence_intervals(result: EstimateResult, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    se = result.std_errors
    if se is None:
        raise ValueError("result has no covariance")
    z = norm.ppf(0.5 + level / 2.0)
    return result.beta_hat - z * se, result.beta_hat + z * se


def with_covariance(result: EstimateResult, cov: np.ndarray, method: str, level: float = 0.95) -> EstimateResult:
    """Copy of ``result`` carrying ``cov`` and matching confidence intervals."""
    cov = _sym(np.asarray(cov, dtype=float))
    out = replace(result, covariance=cov, variance_method=method, level=level)
    lo, hi = confidence_intervals(out, level)
    return replace(out, ci_lower=lo, ci_upper=hi)
