"""Model-dependent comparison estimators (Model 1 / Model 2).

These estimators replace the unobservable U(s, x; beta) by its posterior
expectation given the released level and the other variables,

    V(s*, x; beta) = sum_k U(k, x; beta) p(s = k | s*, x),

with the posterior obtained from Bayes' rule, the known PRAM law
p(s* | s) and a *parametric* conditional p(s | x). The parametric piece is
set up in one of two ways (``LatentModelSpec.target``):

``"released"`` (default)
    Regress the released level on the other variables, p(s* | x; theta),
    by ordinary maximum likelihood, then recover p(s | x) through ``P^-1``
    projected back onto the simplex.
``"latent"``
    Posit p(s | x; theta) directly and fit it through the observed-data
    likelihood ``sum_i log sum_k P[s*_i, k] p(s = k | x_i; theta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, softmax

from .core import Dataset, EstimateResult, PramError, TransitionMatrix, invert_transition
from .estfun import EstimandSpec, EstimatingFunction
from .estimators import estimate_with_weights
from .mechanism import project_simplex
from .solver import SolverConfig, WeightScheme, newton

FAMILIES = ("logistic", "logistic-no-intercept", "probit", "probit-no-intercept")
_SQRT2 = np.sqrt(2.0)
_SQRT2PI = np.sqrt(2.0 * np.pi)


class DegenerateModel(PramError):
    code = "DegenerateModel"


class LatentNoConvergence(PramError):
    code = "NoConvergence"


def probit_cdf(v):
    """Standard normal CDF as ``erfc(-v / sqrt(2)) / 2``."""
    return 0.5 * erfc(-np.asarray(v, dtype=float) / _SQRT2)


@dataclass(frozen=True)
class LatentModelSpec:
    family: str
    covariates: tuple[str, ...]
    target: str = "released"

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown latent family {self.family!r}; choose from {FAMILIES}")
        if self.target not in ("released", "latent"):
            raise ValueError(f"unknown target {self.target!r}")

    @property
    def link(self) -> str:
        return self.family.split("-")[0]

    @property
    def intercept(self) -> bool:
        return not self.family.endswith("no-intercept")


def default_latent_spec(estimand: EstimandSpec, family: str = "logistic", target: str = "released") -> LatentModelSpec:
    """Latent model on every estimand variable other than the sensitive one."""
    sens = estimand.sensitive_column
    names = []
    if estimand.sensitive_role == "covariate" and estimand.response:
        names.append(estimand.response)
    names += [c for c in estimand.covariates if c != sens]
    return LatentModelSpec(family, tuple(names), target)


def _design(data: Dataset, spec: LatentModelSpec) -> np.ndarray:
    cols = [np.ones(data.n)] if spec.intercept else []
    for name in spec.covariates:
        if name not in data.columns:
            raise ValueError(f"latent-model covariate {name!r} not found")
        cols.append(data.columns[name])
    if not cols:
        raise ValueError("latent model has no parameters")
    return np.column_stack(cols)


def _probs(theta: np.ndarray, Z: np.ndarray, k: int, link: str):
    """Category probabilities (n, K) and their derivatives w.r.t. each eta."""
    eta = Z @ theta.reshape(k - 1, Z.shape[1]).T  # (n, K-1)
    if link == "probit":
        pi1 = probit_cdf(eta[:, 0])
        dens = np.exp(-0.5 * eta[:, 0] ** 2) / _SQRT2PI
        pi = np.column_stack([1.0 - pi1, pi1])
        dpi = np.stack([-dens, dens], axis=1)[:, :, None]  # (n, K, 1)
        return pi, dpi
    full = np.column_stack([np.zeros(Z.shape[0]), eta])
    pi = softmax(full, axis=1)
    # d pi_k / d eta_j for j = 1..K-1
    dpi = pi[:, :, None] * (np.eye(k)[None, :, 1:] - pi[:, None, 1:])
    return pi, dpi


class _Likelihood:
    """Mean log-likelihood score as a residual map for the Newton engine."""

    def __init__(self, Z, observed, k, link, mixing=None):
        self.Z = Z
        self.obs = observed
        self.k = k
        self.link = link
        self.mixing = mixing  # None for a direct model of the released level
        self.n = Z.shape[0]
        self.d = (k - 1) * Z.shape[1]

    def probs(self, theta):
        return _probs(np.asarray(theta, dtype=float), self.Z, self.k, self.link)

    def loglik(self, theta) -> float:
        pi, _ = self.probs(theta)
        m = self._marginal(pi)
        return float(np.sum(np.log(np.maximum(m, 1e-300))))

    def _marginal(self, pi):
        if self.mixing is None:
            return pi[np.arange(self.n), self.obs]
        return np.einsum("ik,ik->i", self.mixing[self.obs], pi)

    def score(self, theta):
        pi, dpi = self.probs(theta)
        m = np.maximum(self._marginal(pi), 1e-300)
        if self.mixing is None:
            dl = np.zeros_like(pi)
            dl[np.arange(self.n), self.obs] = 1.0 / m
        else:
            dl = self.mixing[self.obs] / m[:, None]
        G = np.einsum("ik,ikj->ij", dl, dpi)  # (n, K-1)
        return (G.T @ self.Z).ravel() / self.n

    def score_jac(self, theta, cfg):
        theta = np.asarray(theta, dtype=float)
        J = np.empty((self.d, self.d))
        for j in range(self.d):
            h = cfg.fd_step * (1.0 + abs(theta[j]))
            up, dn = theta.copy(), theta.copy()
            up[j] += h
            dn[j] -= h
            J[:, j] = (self.score(up) - self.score(dn)) / (2.0 * h)
        return self.score(theta), J


@dataclass(frozen=True)
class ModelDependentFit:
    spec: LatentModelSpec
    p: TransitionMatrix
    theta: np.ndarray
    loglik: float
    converged: bool
    iterations: int

    def released_probabilities(self, data: Dataset) -> np.ndarray:
        """Model-implied p(s* | x) for every record, (n, K)."""
        if self.spec.target == "released":
            pi, _ = _probs(self.theta, _design(data, self.spec), self.p.k, self.spec.link)
            return pi
        return self.latent_probabilities(data) @ self.p.entries.T

    def latent_probabilities(self, data: Dataset) -> np.ndarray:
        """Model-implied p(s | x) for every record, (n, K)."""
        pi, _ = _probs(self.theta, _design(data, self.spec), self.p.k, self.spec.link)
        if self.spec.target == "latent":
            return pi
        q = invert_transition(self.p).entries
        raw = pi @ q.T
        inside = np.all((raw >= 0.0) & (raw <= 1.0), axis=1)
        out = raw.copy()
        for i in np.flatnonzero(~inside):
            out[i] = project_simplex(raw[i])
        return out

    def posterior(self, data: Dataset, observed=None) -> np.ndarray:
        """p(s = k | s*_i, x_i) as an (n, K) array of probability rows."""
        observed = data.sensitive("perturbed") if observed is None else np.asarray(observed, dtype=np.intp)
        latent = self.latent_probabilities(data)
        num = self.p.entries[observed] * latent
        den = num.sum(axis=1)
        if np.any(den <= 0.0):
            raise DegenerateModel("posterior is undefined: released level has zero model probability")
        return num / den[:, None]


def fit_latent_model(
    data: Dataset, p: TransitionMatrix, spec: LatentModelSpec, cfg: SolverConfig | None = None
) -> ModelDependentFit:
    k = p.k
    if spec.link == "probit" and k != 2:
        raise ValueError("probit latent models need a binary sensitive variable")
    cfg = cfg or SolverConfig(tol=1e-9, max_iterations=200)
    Z = _design(data, spec)
    observed = data.sensitive("perturbed")
    mixing = p.entries if spec.target == "latent" else None
    lik = _Likelihood(Z, observed, k, spec.link, mixing)
    theta, diag = newton(lik, np.zeros(lik.d), cfg)
    if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > 50.0:
        raise DegenerateModel("latent model diverged; fitted probabilities are pinned at 0 or 1")
    return ModelDependentFit(spec, p, theta, lik.loglik(theta), diag.converged, diag.iterations)


def model_dependent_estimate(
    data: Dataset,
    p: TransitionMatrix,
    u: EstimatingFunction,
    fit: ModelDependentFit,
    cfg: SolverConfig | None = None,
    method: str | None = None,
    **kwargs,
) -> EstimateResult:
    """Solve ``(1/n) sum_i sum_k U(k, x_i; beta) p(s=k | s*_i, x_i) = 0``.

    No covariance is attached: a valid one would have to account for the
    latent-model fit.
    """
    if not fit.converged:
        raise LatentNoConvergence("latent model did not converge")
    if method is None:
        method = "model1" if fit.spec.intercept else "model2"
    w = WeightScheme(fit.posterior(data), "posterior-model")
    kwargs.setdefault("plugin", False)
    return estimate_with_weights(data, u, w, method, cfg, **kwargs)
