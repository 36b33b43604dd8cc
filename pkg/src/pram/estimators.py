"""Proposed, oracle and naive estimators.

The proposed estimator weights U at every level k by ``q[k, s*_i]`` from
``P^-1``; the oracle uses the (normally unavailable) original levels; the
naive estimator plugs the released levels in as if they were original.
"""

from __future__ import annotations

import numpy as np

from .core import Dataset, EstimateResult, TransitionMatrix, invert_transition
from .estfun import EstimatingFunction
from .inference import sandwich, with_covariance
from .solver import Problem, SolverConfig, SolverError, WeightScheme, solve


def estimate_with_weights(
    data: Dataset,
    u: EstimatingFunction,
    weights: WeightScheme,
    method: str,
    cfg: SolverConfig | None = None,
    *,
    plugin: bool = True,
    level: float = 0.95,
) -> EstimateResult:
    """Solve one weighted equation and package the root.

    The per-record terms at the root are kept on the result (``influence``)
    together with the average Jacobian, so variance estimation does not
    need the dataset again. With ``plugin`` the sandwich covariance is
    attached.
    """
    cfg = cfg or SolverConfig()
    problem = Problem(data, u, weights)
    beta, diag = solve(data, u, weights, cfg, problem=problem)
    terms = problem.terms(beta)
    _, omega = problem.score_jac(beta, cfg)
    result = EstimateResult(
        beta_hat=beta, method=method, diagnostics=diag, names=u.names, influence=terms, omega=omega, level=level
    )
    if plugin and diag.converged:
        try:
            result = with_covariance(result, sandwich(terms, omega), "plugin", level)
        except SolverError:
            pass
    return result


def proposed_weights(data: Dataset, p: TransitionMatrix) -> WeightScheme:
    return WeightScheme.inverse_transition(invert_transition(p), data.sensitive("perturbed"))


def proposed_estimate(
    data: Dataset, p: TransitionMatrix, u: EstimatingFunction, cfg: SolverConfig | None = None, **kwargs
) -> EstimateResult:
    """Model-agnostic estimator from the released sensitive column.

    Solves ``(1/n) sum_i sum_k U(k, x_i; beta) q[k, s*_i] = 0`` with
    ``q = P^-1``. ``result.influence`` holds
    ``phi(s*_i, x_i; beta_hat) = U(x_i; beta_hat) P^-1 e_{s*_i}``.
    """
    if data.k != p.k:
        raise ValueError(f"dataset has K={data.k}, transition matrix has K={p.k}")
    return estimate_with_weights(data, u, proposed_weights(data, p), "proposed", cfg, **kwargs)


def oracle_estimate(data: Dataset, u: EstimatingFunction, cfg: SolverConfig | None = None, **kwargs) -> EstimateResult:
    w = WeightScheme.indicator(data.sensitive("original"), u.k, "indicator-original")
    return estimate_with_weights(data, u, w, "oracle", cfg, **kwargs)


def naive_estimate(data: Dataset, u: EstimatingFunction, cfg: SolverConfig | None = None, **kwargs) -> EstimateResult:
    w = WeightScheme.indicator(data.sensitive("perturbed"), u.k, "indicator-perturbed")
    return estimate_with_weights(data, u, w, "naive", cfg, **kwargs)


def efficiency_loss(result: EstimateResult, oracle_terms: np.ndarray) -> np.ndarray:
    """Omega^-1 [(1/n) sum (phi_i - U_i)(phi_i - U_i)'] Omega^-T / n.

    ``oracle_terms`` are U(s_i, x_i; beta_hat) at the original levels,
    available only in simulations.
    """
    diff = result.influence - oracle_terms
    return sandwich(diff, result.omega)
