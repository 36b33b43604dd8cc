"""Estimating functions U(s, x; beta) evaluable at every sensitive level.

The estimators sum U over all K levels of the sensitive variable, so an
estimating function never reads the sensitive column of a dataset: the
level is always passed in explicitly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .core import Dataset, DimensionMismatch, PramError

IDENTITY = 0
LOGIT = 1


class NonBinaryResponse(PramError):
    code = "NonBinaryResponse"


class MissingLevel(PramError):
    code = "MissingLevel"


class MissingColumn(PramError):
    code = "MissingColumn"


@dataclass(frozen=True)
class EstimandSpec:
    kind: str  # mean | logistic | linear | custom
    response: str | None = None
    covariates: tuple[str, ...] = ()
    intercept: bool = True
    sensitive_role: str = "response"
    sensitive_column: str | None = None
    levels: int = 2

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.kind not in ("mean", "logistic", "linear", "custom"):
            raise ValueError(f"unknown estimand kind {self.kind!r}")
        if self.sensitive_role not in ("response", "covariate"):
            raise ValueError(f"sensitive_role must be 'response' or 'covariate', got {self.sensitive_role!r}")
        if self.sensitive_role == "covariate" and self.sensitive_column not in self.covariates:
            raise ValueError("a sensitive covariate must appear in the covariate list")

    @property
    def d(self) -> int:
        if self.kind == "mean":
            return 1
        return int(self.intercept) + len(self.covariates)

    @classmethod
    def from_dict(cls, cfg: Mapping) -> "EstimandSpec":
        cfg = dict(cfg)
        schema = cfg.pop("schema", 1)
        if schema != 1:
            raise ValueError(f"unsupported estimand schema {schema}")
        cfg["covariates"] = tuple(cfg.get("covariates", ()))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown estimand fields: {sorted(unknown)}")
        return cls(**cfg)

    @classmethod
    def from_json(cls, text: str) -> "EstimandSpec":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "kind": self.kind,
            "response": self.response,
            "covariates": list(self.covariates),
            "intercept": self.intercept,
            "sensitive_role": self.sensitive_role,
            "sensitive_column": self.sensitive_column,
            "levels": self.levels,
        }


@dataclass(frozen=True)
class GLMDesign:
    """Level-stacked design for U_k = (r_k - mu(X_k beta)) X_k.

    ``X`` has shape (K, n, d), ``r`` has shape (K, n).
    """

    X: np.ndarray
    r: np.ndarray
    link: int


class EstimatingFunction:
    """Vectorised evaluator of U(level, records; beta) -> (n, d)."""

    d: int
    k: int
    names: tuple[str, ...] = ()

    def values(self, data: Dataset, level: int, beta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, data: Dataset, level: int, beta: np.ndarray) -> np.ndarray | None:
        """dU/dbeta^T as an (n, d, d) array, or None without an analytic form."""
        return None

    @property
    def has_jacobian(self) -> bool:
        return False

    def design(self, data: Dataset) -> GLMDesign | None:
        return None

    def stacked(self, data: Dataset, beta) -> np.ndarray:
        """The (n, d, K) array whose column k is U(k, x_i; beta)."""
        beta = np.asarray(beta, dtype=float)
        return np.stack([self.values(data, lvl, beta) for lvl in range(self.k)], axis=2)

    def check(self, data: Dataset) -> None:
        if data.k != self.k:
            raise DimensionMismatch(f"estimand has K={self.k}, dataset has K={data.k}")


class GLMEstimatingFunction(EstimatingFunction):
    """Mean, linear and logistic estimands share the form (r - mu(eta)) x."""

    def __init__(self, spec: EstimandSpec, link: int):
        self.spec = spec
        self.link = link
        self.k = spec.levels
        self.d = spec.d
        if spec.kind == "mean":
            self.names = ("mean",)
        else:
            self.names = (("intercept",) if spec.intercept else ()) + spec.covariates

    def _sensitive_name(self, data: Dataset) -> str:
        return self.spec.sensitive_column or data.sensitive_name

    def _columns(self, data: Dataset, level: int) -> tuple[np.ndarray, np.ndarray]:
        n = data.n
        sens = self._sensitive_name(data)
        if self.spec.kind == "mean":
            X = np.ones((n, 1))
        else:
            cols = [np.ones(n)] if self.spec.intercept else []
            for name in self.spec.covariates:
                if name == sens and self.spec.sensitive_role == "covariate":
                    cols.append(np.full(n, float(level)))
                else:
                    cols.append(_column(data, name))
            X = np.column_stack(cols) if cols else np.empty((n, 0))
        if self.spec.sensitive_role == "response":
            r = np.full(n, float(level))
        else:
            r = np.asarray(_column(data, self.spec.response), dtype=float)
        return X, r

    def check(self, data: Dataset) -> None:
        super().check(data)
        sens = self._sensitive_name(data)
        if self.spec.kind != "mean":
            for name in self.spec.covariates:
                if not (name == sens and self.spec.sensitive_role == "covariate"):
                    _column(data, name)
        if self.spec.sensitive_role == "covariate":
            _column(data, self.spec.response)
        if self.link == LOGIT and self.spec.sensitive_role == "covariate":
            y = _column(data, self.spec.response)
            if not np.all((y == 0) | (y == 1)):
                raise NonBinaryResponse(f"logistic response {self.spec.response!r} must be 0/1")

    def design(self, data: Dataset) -> GLMDesign:
        Xs, rs = zip(*(self._columns(data, lvl) for lvl in range(self.k)))
        return GLMDesign(np.ascontiguousarray(np.stack(Xs)), np.ascontiguousarray(np.stack(rs)), self.link)

    def _mean(self, eta):
        return expit(eta) if self.link == LOGIT else eta

    def values(self, data, level, beta):
        X, r = self._columns(data, level)
        beta = np.asarray(beta, dtype=float)
        return (r - self._mean(X @ beta))[:, None] * X

    @property
    def has_jacobian(self) -> bool:
        return True

    def jacobian(self, data, level, beta):
        X, _ = self._columns(data, level)
        if self.link == LOGIT:
            mu = expit(X @ np.asarray(beta, dtype=float))
            dmu = mu * (1.0 - mu)
        else:
            dmu = np.ones(X.shape[0])
        return -dmu[:, None, None] * X[:, :, None] * X[:, None, :]


def _column(data: Dataset, name: str) -> np.ndarray:
    try:
        return data.columns[name]
    except KeyError:
        raise MissingColumn(f"column {name!r} not found in dataset") from None


def build_mean(spec: EstimandSpec | None = None, *, levels: int = 2) -> GLMEstimatingFunction:
    """U(y; beta) = y - beta for a sensitive response coded 0..K-1."""
    if spec is None:
        spec = EstimandSpec("mean", levels=levels)
    if spec.sensitive_role != "response":
        raise ValueError("the mean estimand needs the sensitive variable as response")
    return GLMEstimatingFunction(spec, IDENTITY)


def build_logistic(spec: EstimandSpec) -> GLMEstimatingFunction:
    """Logistic score (y - expit(beta'x)) x with analytic Jacobian."""
    if spec.sensitive_role == "response" and spec.levels != 2:
        raise NonBinaryResponse(f"logistic estimand needs a binary response, got K={spec.levels}")
    return GLMEstimatingFunction(spec, LOGIT)


def build_linear(spec: EstimandSpec) -> GLMEstimatingFunction:
    """Least-squares normal equations (y - beta'x) x."""
    return GLMEstimatingFunction(spec, IDENTITY)


class TableEstimatingFunction(EstimatingFunction):
    def __init__(self, table, d, jacobians=None, names=()):
        self.table = dict(table)
        self.jacobians = None if jacobians is None else dict(jacobians)
        self.k = len(self.table)
        self.d = int(d)
        self.names = tuple(names) or tuple(f"beta{j}" for j in range(self.d))

    def values(self, data, level, beta):
        out = np.asarray(self.table[level](data.columns, np.asarray(beta, dtype=float)), dtype=float)
        if out.ndim == 1 and self.d == 1:
            out = out[:, None]
        if out.shape != (data.n, self.d):
            raise DimensionMismatch(f"level {level} returned shape {out.shape}, expected {(data.n, self.d)}")
        return out

    @property
    def has_jacobian(self) -> bool:
        return self.jacobians is not None

    def jacobian(self, data, level, beta):
        if self.jacobians is None:
            return None
        out = np.asarray(self.jacobians[level](data.columns, np.asarray(beta, dtype=float)), dtype=float)
        return out.reshape(data.n, self.d, self.d)


def _per_record(fn: Callable) -> Callable:
    def wrapped(columns, beta):
        names = list(columns)
        n = len(next(iter(columns.values()))) if columns else 0
        rows = [fn({c: columns[c][i] for c in names}, beta) for i in range(n)]
        return np.asarray(rows, dtype=float).reshape(n, -1)

    return wrapped


def build_custom(
    table: Mapping[int, Callable],
    d: int,
    *,
    jacobians: Mapping[int, Callable] | None = None,
    vectorized: bool = True,
    names: Sequence[str] = (),
) -> TableEstimatingFunction:
    """Estimating function dispatched on the sensitive level.

    ``table[level](columns, beta)`` returns the (n, d) contributions for all
    records with the sensitive variable set to ``level``. With
    ``vectorized=False`` each entry is called as ``fn(record_dict, beta)``
    and returns one length-d vector.
    """
    levels = sorted(table)
    k = len(levels)
    if k < 2:
        raise MissingLevel("a custom estimand needs at least two levels")
    missing = sorted(set(range(k)) - set(levels))
    if missing:
        raise MissingLevel(f"levels {missing} have no estimating function")
    if jacobians is not None and sorted(jacobians) != levels:
        raise MissingLevel("jacobian table must cover the same levels")
    if not vectorized:
        table = {lvl: _per_record(fn) for lvl, fn in table.items()}
        if jacobians is not None:
            jacobians = {lvl: _per_record(fn) for lvl, fn in jacobians.items()}
    return TableEstimatingFunction(table, d, jacobians, names)


def build(spec: EstimandSpec) -> EstimatingFunction:
    if spec.kind == "mean":
        return build_mean(spec)
    if spec.kind == "logistic":
        return build_logistic(spec)
    if spec.kind == "linear":
        return build_linear(spec)
    raise ValueError("custom estimands are built with build_custom(), not from a spec")
