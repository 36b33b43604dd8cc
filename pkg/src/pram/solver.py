"""Damped Newton root finder for weighted empirical estimating equations.

Every estimator in the package solves

    (1/n) sum_i sum_k W[i, k] U(k, x_i; beta) = 0

for some record-by-level weight matrix ``W``; only the weights differ.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .core import Dataset, DimensionMismatch, PramError, ReversionMatrix, SolverDiagnostics
from .estfun import EstimatingFunction


class SolverError(PramError):
    code = "SolverError"


class NoConvergence(SolverError):
    code = "NoConvergence"


class SingularJacobian(SolverError):
    code = "SingularJacobian"


class SingularOmega(SolverError):
    code = "SingularOmega"


WEIGHT_TAGS = ("inverse-transition", "indicator-original", "indicator-perturbed", "posterior-model", "resampled")


@dataclass(frozen=True)
class WeightScheme:
    weights: np.ndarray  # (n, K)
    tag: str

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float)
        if w.ndim != 2:
            raise DimensionMismatch("weights must be an (n, K) array")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if self.tag not in WEIGHT_TAGS:
            raise ValueError(f"unknown weight tag {self.tag!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def k(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def inverse_transition(cls, q: ReversionMatrix, observed) -> "WeightScheme":
        """Row i is column ``s*_i`` of ``P^-1``."""
        return cls(q.weights(observed), "inverse-transition")

    @classmethod
    def indicator(cls, levels, k: int, tag: str = "indicator-original") -> "WeightScheme":
        levels = np.asarray(levels, dtype=np.intp)
        return cls(np.eye(k)[levels], tag)

    def scaled(self, multipliers) -> "WeightScheme":
        m = np.asarray(multipliers, dtype=float)
        return WeightScheme(self.weights * m[:, None], "resampled")


@dataclass(frozen=True)
class SolverConfig:
    init: object = "auto"  # "auto" or a length-d vector
    max_iterations: int = 100
    tol: float = 1e-10
    max_halvings: int = 30
    jacobian: str = "analytic"  # or "finite-difference"
    fd_step: float = 1e-6
    max_damping: float = 1e-4

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.jacobian not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")

    def with_init(self, init) -> "SolverConfig":
        return replace(self, init=init)


class Problem:
    """Residual map of one weighted estimating equation on one dataset."""

    def __init__(self, data: Dataset, u: EstimatingFunction, weights: WeightScheme, _design=None):
        if weights.n != data.n:
            raise DimensionMismatch(f"weights cover {weights.n} records, dataset has {data.n}")
        if weights.k != u.k:
            raise DimensionMismatch(f"weights cover {weights.k} levels, estimand has {u.k}")
        self.data = data
        self.u = u
        self.weights = weights
        self.n = data.n
        self.d = u.d
        self._design = _design if _design is not None else u.design(data)
        self._active = [k for k in range(u.k) if np.any(weights.weights[:, k] != 0.0)]

    def reweighted(self, weights: WeightScheme) -> "Problem":
        return Problem(self.data, self.u, weights, _design=self._design)

    def score(self, beta) -> np.ndarray:
        beta = np.ascontiguousarray(beta, dtype=float)
        if self._design is not None:
            D = self._design
            return kernels.glm_score_jac(D.X, D.r, self.weights.weights, beta, D.link, False)[0]
        W = self.weights.weights
        g = np.zeros(self.d)
        for k in self._active:
            g += W[:, k] @ self.u.values(self.data, k, beta)
        return g / self.n

    def analytic(self, beta) -> tuple[np.ndarray, np.ndarray]:
        beta = np.ascontiguousarray(beta, dtype=float)
        if self._design is not None:
            D = self._design
            return kernels.glm_score_jac(D.X, D.r, self.weights.weights, beta, D.link, True)
        if not self.u.has_jacobian:
            raise ValueError("estimating function has no analytic Jacobian")
        W = self.weights.weights
        J = np.zeros((self.d, self.d))
        for k in self._active:
            J += np.einsum("i,iab->ab", W[:, k], self.u.jacobian(self.data, k, beta))
        return self.score(beta), J / self.n

    def finite_difference(self, beta, step: float = 1e-6) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        J = np.empty((self.d, self.d))
        for j in range(self.d):
            h = step * (1.0 + abs(beta[j]))
            up, dn = beta.copy(), beta.copy()
            up[j] += h
            dn[j] -= h
            J[:, j] = (self.score(up) - self.score(dn)) / (2.0 * h)
        return J

    def score_jac(self, beta, cfg: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
        if cfg.jacobian == "analytic" and (self._design is not None or self.u.has_jacobian):
            return self.analytic(beta)
        return self.score(beta), self.finite_difference(beta, cfg.fd_step)

    def terms(self, beta) -> np.ndarray:
        """Per-record contributions sum_k W[i, k] U(k, x_i; beta), (n, d)."""
        beta = np.ascontiguousarray(beta, dtype=float)
        if self._design is not None:
            D = self._design
            return kernels.glm_terms(D.X, D.r, self.weights.weights, beta, D.link)
        W = self.weights.weights
        out = np.zeros((self.n, self.d))
        for k in self._active:
            out += W[:, k, None] * self.u.values(self.data, k, beta)
        return out


def _newton_step(g, J, max_damping):
    try:
        step = np.linalg.solve(J, -g)
        if np.all(np.isfinite(step)):
            return step
    except np.linalg.LinAlgError:
        pass
    JtJ = J.T @ J
    scale = np.trace(JtJ) / J.shape[0]
    if not np.isfinite(scale) or scale <= 0.0:
        raise SingularJacobian("Jacobian is zero or not finite")
    lam = 1e-10
    while lam <= max_damping * (1 + 1e-12):
        try:
            step = np.linalg.solve(JtJ + lam * scale * np.eye(J.shape[0]), -J.T @ g)
            if np.all(np.isfinite(step)):
                return step
        except np.linalg.LinAlgError:
            pass
        lam *= 100.0
    raise SingularJacobian("Newton system is singular even after diagonal damping")


def newton(problem: Problem, init, cfg: SolverConfig) -> tuple[np.ndarray, SolverDiagnostics]:
    beta = np.array(init, dtype=float).reshape(problem.d)
    g, J = problem.score_jac(beta, cfg)
    if not np.all(np.isfinite(g)):
        raise SolverError("estimating function is not finite at the starting value")
    norm = float(np.linalg.norm(g))
    it = 0
    msg = ""
    while np.max(np.abs(g)) >= cfg.tol:
        if it >= cfg.max_iterations:
            msg = "iteration budget exhausted"
            break
        step = _newton_step(g, J, cfg.max_damping)
        t = 1.0
        for _ in range(cfg.max_halvings + 1):
            cand = beta + t * step
            g_new = problem.score(cand)
            new_norm = float(np.linalg.norm(g_new))
            if np.isfinite(new_norm) and new_norm < norm:
                break
            t *= 0.5
        else:
            msg = "step halving failed to reduce the residual"
            break
        it += 1
        beta = cand
        g, J = problem.score_jac(beta, cfg)
        norm = float(np.linalg.norm(g))
    resid = float(np.max(np.abs(g)))
    converged = resid < cfg.tol
    try:
        jcond = float(np.linalg.cond(J))
    except np.linalg.LinAlgError:
        jcond = float("inf")
    return beta, SolverDiagnostics(it, resid, converged, jcond, msg)


def solve(
    data: Dataset,
    u: EstimatingFunction,
    w: WeightScheme,
    cfg: SolverConfig | None = None,
    *,
    problem: Problem | None = None,
) -> tuple[np.ndarray, SolverDiagnostics]:
    """Root of the weighted estimating equation.

    Non-convergence is reported through ``diagnostics.converged`` with the
    best iterate returned; only an unsolvable Newton system raises.
    """
    cfg = cfg or SolverConfig()
    if data.n < u.d:
        raise DimensionMismatch(f"need at least d={u.d} records, got {data.n}")
    u.check(data)
    problem = problem or Problem(data, u, w)
    init = cfg.init
    if isinstance(init, str):
        if init != "auto":
            raise ValueError(f"unknown init {init!r}")
        init = np.zeros(u.d)
        if w.tag == "inverse-transition" and data.perturbed is not None:
            warm = problem.reweighted(WeightScheme.indicator(data.perturbed, u.k, "indicator-perturbed"))
            start, diag = newton(warm, init, cfg)
            if np.all(np.isfinite(start)):
                init = start
    return newton(problem, init, cfg)


def average_jacobian(data: Dataset, u: EstimatingFunction, w: WeightScheme, beta, cfg: SolverConfig | None = None) -> np.ndarray:
    """Weighted empirical Omega = (1/n) sum_i sum_k W[i,k] dU(k, x_i; beta)/dbeta^T."""
    cfg = cfg or SolverConfig()
    return Problem(data, u, w).score_jac(np.asarray(beta, dtype=float), cfg)[1]


def invert_omega(omega: np.ndarray, max_condition: float = 1e10) -> np.ndarray:
    cond = np.linalg.cond(omega)
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularOmega(f"average Jacobian has condition number {cond:.3g}")
    return np.linalg.inv(omega)
