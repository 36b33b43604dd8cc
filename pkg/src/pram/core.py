"""Shared domain types: transition/reversion matrices, datasets, results.

Matrix orientation follows the column-stochastic convention throughout:
entry ``(i, j)`` of a transition matrix is ``Pr(S* = i | S = j)``, so each
column is the perturbation distribution of one true category.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

STOCHASTIC_TOL = 1e-12
SINGULAR_DET = 1e-12
INVERSION_TOL = 1e-9
MAX_CONDITION = 1e8
WARN_CONDITION = 1e4


class PramError(Exception):
    """Base class for all errors raised by this package."""

    code = "PramError"


class NonStochastic(PramError):
    code = "NonStochastic"


class Singular(PramError):
    code = "Singular"


class IllConditioned(PramError):
    code = "IllConditioned"


class DimensionMismatch(PramError):
    code = "DimensionMismatch"


class LevelOutOfRange(PramError):
    code = "LevelOutOfRange"


class ConditioningWarning(UserWarning):
    pass


class LowDiagonalWarning(UserWarning):
    pass


class OutOfSimplexWarning(UserWarning):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TransitionMatrix:
    """Validated K x K column-stochastic PRAM matrix.

    Build instances through :func:`validate_transition`; the constructor
    does not check anything.
    """

    entries: np.ndarray
    condition: float = float("nan")

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.entries).copy()

    @classmethod
    def symmetric_binary(cls, p00: float, p11: float | None = None) -> "TransitionMatrix":
        """2 x 2 matrix with retention probabilities ``p00`` and ``p11``."""
        p11 = p00 if p11 is None else p11
        return validate_transition([[p00, 1.0 - p11], [1.0 - p00, p11]])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True)
class ReversionMatrix:
    """Inverse of a transition matrix, ``Q2 = P^-1``."""

    entries: np.ndarray
    condition: float
    residual: float

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    def weights(self, observed_levels: np.ndarray) -> np.ndarray:
        """Per-record weight rows ``Q2[:, s*_i]`` as an (n, K) array."""
        observed_levels = np.asarray(observed_levels, dtype=np.intp)
        return np.ascontiguousarray(self.entries[:, observed_levels].T)


def validate_transition(raw) -> TransitionMatrix:
    p = np.array(raw, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise DimensionMismatch(f"transition matrix must be square, got shape {p.shape}")
    k = p.shape[0]
    if k < 2:
        raise DimensionMismatch("transition matrix needs at least two categories")
    if not np.all(np.isfinite(p)):
        raise NonStochastic("transition matrix has non-finite entries")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise NonStochastic("transition matrix entries must lie in [0, 1]")
    colsum = p.sum(axis=0)
    bad = np.flatnonzero(np.abs(colsum - 1.0) > STOCHASTIC_TOL)
    if bad.size:
        raise NonStochastic(
            f"columns {bad.tolist()} do not sum to 1 (sums {colsum[bad].tolist()})"
        )
    det = np.linalg.det(p)
    if abs(det) <= SINGULAR_DET:
        raise Singular(f"transition matrix is singular (det={det:.3g})")
    cond = float(np.linalg.cond(p))
    if not np.isfinite(cond):
        raise Singular("transition matrix has infinite condition number")
    low = np.flatnonzero(np.diag(p) < 0.5)
    if low.size:
        warnings.warn(
            f"diagonal entries {low.tolist()} are below 0.5; the released variable "
            "keeps little of the original information",
            LowDiagonalWarning,
            stacklevel=2,
        )
    return TransitionMatrix(_frozen(p), cond)


def invert_transition(p: TransitionMatrix) -> ReversionMatrix:
    cond = float(np.linalg.cond(p.entries))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditioned(
            f"condition number {cond:.3g} exceeds {MAX_CONDITION:.0e}; the mechanism "
            "destroys too much information for stable estimation"
        )
    if cond > WARN_CONDITION:
        warnings.warn(
            f"transition matrix condition number is {cond:.3g}; inverse weights "
            "will be large and estimates noisy",
            ConditioningWarning,
            stacklevel=2,
        )
    q = np.linalg.inv(p.entries)
    resid = float(np.abs(q @ p.entries - np.eye(p.k)).sum(axis=1).max())
    if resid >= INVERSION_TOL:
        raise IllConditioned(f"inversion residual {resid:.3g} exceeds {INVERSION_TOL}")
    return ReversionMatrix(_frozen(q), cond, resid)


def read_matrix_csv(path) -> TransitionMatrix:
    """Load a header-less K x K matrix; row i, column j is Pr(S*=i | S=j)."""
    raw = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    return validate_transition(raw)


@dataclass(frozen=True)
class FrequencyVector:
    probs: np.ndarray
    tag: str = "proper"  # "proper" | "raw-recovered"
    out_of_simplex: bool = False

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 1:
            raise DimensionMismatch("frequency vector must be one-dimensional")
        if abs(probs.sum() - 1.0) > INVERSION_TOL:
            raise ValueError(f"frequencies sum to {probs.sum():.12g}, not 1")
        if self.tag == "proper" and (np.any(probs < -INVERSION_TOL) or np.any(probs > 1 + INVERSION_TOL)):
            raise ValueError("proper frequency vector has entries outside [0, 1]")
        object.__setattr__(self, "probs", probs)

    @property
    def k(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def from_levels(cls, levels, k: int) -> "FrequencyVector":
        levels = np.asarray(levels, dtype=np.intp)
        counts = np.bincount(levels, minlength=k)
        if counts.shape[0] > k:
            raise LevelOutOfRange(f"levels exceed K-1={k - 1}")
        return cls(counts / counts.sum())


ORIGINAL = "original"
PERTURBED = "perturbed"


@dataclass(frozen=True)
class Dataset:
    """Column table with one categorical sensitive variable.

    ``columns`` holds the non-sensitive numeric variables. The sensitive
    variable is kept separately as integer codes ``0..k-1``, in its original
    form, its PRAM-ed form, or both.
    """

    columns: Mapping[str, np.ndarray]
    k: int
    sensitive_name: str = "s"
    original: np.ndarray | None = None
    perturbed: np.ndarray | None = None

    def __post_init__(self):
        cols = {}
        n = None
        for name, values in self.columns.items():
            arr = _frozen(values)
            if arr.ndim != 1:
                raise DimensionMismatch(f"column {name!r} must be one-dimensional")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"column {name!r} has non-finite values")
            if n is not None and arr.shape[0] != n:
                raise DimensionMismatch(f"column {name!r} has length {arr.shape[0]}, expected {n}")
            n = arr.shape[0]
            cols[name] = arr
        for label in (ORIGINAL, PERTURBED):
            s = getattr(self, label)
            if s is None:
                continue
            s = np.array(s, copy=True)
            if s.ndim != 1:
                raise DimensionMismatch(f"{label} sensitive column must be one-dimensional")
            if s.size and (not np.all(s == np.round(s)) or s.min() < 0 or s.max() >= self.k):
                raise LevelOutOfRange(f"{label} sensitive values must be integers in 0..{self.k - 1}")
            s = s.astype(np.intp)
            if n is not None and s.shape[0] != n:
                raise DimensionMismatch(f"{label} sensitive column has length {s.shape[0]}, expected {n}")
            n = s.shape[0]
            s.setflags(write=False)
            object.__setattr__(self, label, s)
        if n is None:
            raise ValueError("dataset has no columns")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "_n", n)

    @property
    def n(self) -> int:
        return self._n

    def sensitive(self, which: str) -> np.ndarray:
        s = getattr(self, which)
        if s is None:
            raise ValueError(f"dataset has no {which} sensitive column")
        return s

    def with_perturbed(self, perturbed: np.ndarray) -> "Dataset":
        return replace(self, perturbed=perturbed)


@dataclass(frozen=True)
class SolverDiagnostics:
    iterations: int
    residual: float
    converged: bool
    jacobian_condition: float = float("nan")
    message: str = ""


@dataclass(frozen=True)
class EstimateResult:
    beta_hat: np.ndarray
    method: str
    diagnostics: SolverDiagnostics
    covariance: np.ndarray | None = None
    level: float = 0.95
    ci_lower: np.ndarray | None = None
    ci_upper: np.ndarray | None = None
    variance_method: str | None = None
    names: tuple[str, ...] = ()
    # per-record estimating-function contributions at beta_hat, (n, d)
    influence: np.ndarray | None = field(default=None, repr=False)
    omega: np.ndarray | None = field(default=None, repr=False)
    extra: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.beta_hat.shape[0]

    @property
    def std_errors(self) -> np.ndarray | None:
        if self.covariance is None:
            return None
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        ci = None
        if self.ci_lower is not None:
            ci = {"level": self.level, "lower": arr(self.ci_lower), "upper": arr(self.ci_upper)}
        diag = self.diagnostics
        out = {
            "method": self.method,
            "names": list(self.names),
            "beta_hat": arr(self.beta_hat),
            "covariance": arr(self.covariance),
            "std_errors": arr(self.std_errors),
            "ci": ci,
            "variance_method": self.variance_method,
            "diagnostics": {
                "iterations": diag.iterations,
                "residual": diag.residual,
                "converged": diag.converged,
                "jacobian_condition": diag.jacobian_condition,
                "message": diag.message,
            },
        }
        if self.extra:
            out["extra"] = self.extra
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)
