import json

import numpy as np
import pytest

from pram.core import Dataset, DimensionMismatch
from pram.estfun import (
    EstimandSpec,
    MissingColumn,
    MissingLevel,
    NonBinaryResponse,
    build,
    build_custom,
    build_linear,
    build_logistic,
    build_mean,
)

from conftest import linear_data, logistic_data

A_SPEC = EstimandSpec("logistic", response="y", covariates=("x",), sensitive_column="y")
B_SPEC = EstimandSpec("linear", response="y", covariates=("x",), sensitive_role="covariate", sensitive_column="x")


def fd_jacobian(u, data, level, beta, h=1e-6):
    cols = []
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = h
        cols.append((u.values(data, level, beta + e) - u.values(data, level, beta - e)) / (2 * h))
    return np.stack(cols, axis=2)


def test_logistic_values(g):
    data = logistic_data(g, n=50)
    u = build_logistic(A_SPEC)
    beta = np.array([0.3, -0.7])
    x = data.columns["x"]
    mu = 1 / (1 + np.exp(-(beta[0] + beta[1] * x)))
    for k in (0, 1):
        expected = (k - mu)[:, None] * np.column_stack([np.ones(50), x])
        np.testing.assert_allclose(u.values(data, k, beta), expected, atol=1e-14)


def test_linear_sensitive_covariate(g):
    data = linear_data(g, n=40)
    u = build_linear(B_SPEC)
    beta = np.array([-0.5, 2.0])
    y = data.columns["y"]
    for k in (0, 1):
        X = np.column_stack([np.ones(40), np.full(40, k)])
        np.testing.assert_allclose(u.values(data, k, beta), (y - X @ beta)[:, None] * X, atol=1e-14)


def test_mean_estimand_multilevel():
    data = Dataset({"_": np.zeros(5)}, k=4, perturbed=[0, 1, 2, 3, 3])
    u = build_mean(levels=4)
    for k in range(4):
        np.testing.assert_allclose(u.values(data, k, np.array([1.25])), np.full((5, 1), k - 1.25))


@pytest.mark.parametrize("which", ["A", "B"])
def test_analytic_jacobian_matches_finite_difference(g, which):
    if which == "A":
        data, u = logistic_data(g, n=60), build_logistic(A_SPEC)
    else:
        data, u = linear_data(g, n=60), build_linear(B_SPEC)
    beta = np.array([0.2, -0.4])
    for k in (0, 1):
        np.testing.assert_allclose(u.jacobian(data, k, beta), fd_jacobian(u, data, k, beta), atol=1e-7)


def test_stacked_shape(g):
    data = logistic_data(g, n=30)
    assert build(A_SPEC).stacked(data, np.zeros(2)).shape == (30, 2, 2)


def test_logistic_needs_binary():
    with pytest.raises(NonBinaryResponse):
        build_logistic(EstimandSpec("logistic", response="y", covariates=("x",), sensitive_column="y", levels=3))


def test_missing_column(g):
    data = logistic_data(g, n=10)
    u = build(EstimandSpec("logistic", response="y", covariates=("z",), sensitive_column="y"))
    with pytest.raises(MissingColumn):
        u.check(data)


def test_spec_json_roundtrip():
    spec = EstimandSpec.from_json(json.dumps(B_SPEC.to_dict()))
    assert spec == B_SPEC
    assert spec.d == 2
    with pytest.raises(ValueError):
        EstimandSpec.from_dict({"schema": 2, "kind": "mean"})
    with pytest.raises(ValueError):
        EstimandSpec.from_dict({"kind": "mean", "colour": "red"})
    with pytest.raises(ValueError):
        EstimandSpec("linear", response="y", covariates=("z",), sensitive_role="covariate", sensitive_column="x")


def test_custom_table_vectorized_and_per_record(g):
    data = logistic_data(g, n=25)
    table = {k: (lambda cols, b, k=k: (k - b[0]) * cols["x"][:, None]) for k in (0, 1)}
    rec = {k: (lambda row, b, k=k: [(k - b[0]) * row["x"]]) for k in (0, 1)}
    u1 = build_custom(table, 1)
    u2 = build_custom(rec, 1, vectorized=False)
    for k in (0, 1):
        np.testing.assert_allclose(u1.values(data, k, np.array([0.3])), u2.values(data, k, np.array([0.3])))
    assert u1.design(data) is None


def test_custom_table_errors(g):
    with pytest.raises(MissingLevel):
        build_custom({0: lambda c, b: None}, 1)
    with pytest.raises(MissingLevel):
        build_custom({0: lambda c, b: None, 2: lambda c, b: None}, 1)
    u = build_custom({0: lambda c, b: np.zeros((3, 2)), 1: lambda c, b: np.zeros((3, 2))}, 1)
    with pytest.raises(DimensionMismatch):
        u.values(Dataset({"x": np.zeros(3)}, k=2), 0, np.zeros(1))
