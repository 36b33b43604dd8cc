import numpy as np
import pytest

from pram.core import Dataset, DimensionMismatch, validate_transition
from pram.estfun import EstimandSpec, build, build_custom, build_mean
from pram.solver import (
    Problem,
    SingularJacobian,
    SingularOmega,
    SolverConfig,
    WeightScheme,
    average_jacobian,
    invert_omega,
    newton,
    solve,
)

from conftest import logistic_data

A_SPEC = EstimandSpec("logistic", response="y", covariates=("x",), sensitive_column="y")


def test_mean_indicator_solution_is_sample_mean(g):
    levels = g.integers(0, 3, 500)
    data = Dataset({"_": np.zeros(500)}, k=3, original=levels)
    u = build_mean(levels=3)
    beta, diag = solve(data, u, WeightScheme.indicator(levels, 3))
    assert diag.converged
    assert abs(beta[0] - levels.mean()) < 1e-12


def test_logistic_matches_scipy_mle(g):
    from scipy.optimize import minimize

    data = logistic_data(g, n=400)
    y, x = data.original, data.columns["x"]
    Z = np.column_stack([np.ones_like(x), x])

    def nll(b):
        eta = Z @ b
        return np.sum(np.logaddexp(0, eta) - y * eta)

    ref = minimize(nll, np.zeros(2), method="BFGS", options={"gtol": 1e-10}).x
    beta, diag = solve(data, build(A_SPEC), WeightScheme.indicator(y, 2))
    assert diag.converged and diag.residual < 1e-10
    np.testing.assert_allclose(beta, ref, atol=1e-5)


def test_finite_difference_mode_agrees(g):
    data = logistic_data(g, n=300)
    w = WeightScheme.indicator(data.original, 2)
    b1, _ = solve(data, build(A_SPEC), w)
    b2, d2 = solve(data, build(A_SPEC), w, SolverConfig(jacobian="finite-difference"))
    assert d2.converged
    np.testing.assert_allclose(b1, b2, atol=1e-9)


def test_custom_estimand_without_jacobian(g):
    data = logistic_data(g, n=300)
    table = {k: (lambda c, b, k=k: (k - 1 / (1 + np.exp(-b[0])))[None].repeat(c["x"].size)[:, None]) for k in (0, 1)}
    u = build_custom(table, 1)
    beta, diag = solve(data, u, WeightScheme.indicator(data.original, 2))
    assert diag.converged
    p = data.original.mean()
    assert abs(beta[0] - np.log(p / (1 - p))) < 1e-8


def test_step_halving_handles_far_start(g):
    data = logistic_data(g, n=300)
    w = WeightScheme.indicator(data.original, 2)
    b_ref, _ = solve(data, build(A_SPEC), w)
    b, diag = solve(data, build(A_SPEC), w, SolverConfig(init=[8.0, -8.0]))
    assert diag.converged
    np.testing.assert_allclose(b, b_ref, atol=1e-9)


def test_budget_exhaustion_reports_not_converged(g):
    data = logistic_data(g, n=300)
    b, diag = solve(data, build(A_SPEC), WeightScheme.indicator(data.original, 2), SolverConfig(init=[3.0, 3.0], max_iterations=1))
    assert not diag.converged
    assert diag.iterations == 1
    assert diag.message


def test_degenerate_covariate_is_rescued_by_damping():
    # all-zero covariate: the plain Newton system is singular, damping solves it
    data = Dataset({"x": np.zeros(10)}, k=2, original=np.array([0, 1] * 5))
    beta, diag = solve(data, build(A_SPEC), WeightScheme.indicator(data.original, 2))
    assert diag.converged
    assert abs(beta[0]) < 1e-10


def test_singular_jacobian_raises():
    data = Dataset({"x": np.zeros(10)}, k=2, original=np.zeros(10, int))
    flat = {k: (lambda c, b: np.ones((c["x"].size, 1))) for k in (0, 1)}
    u = build_custom(flat, 1)
    with pytest.raises(SingularJacobian):
        newton(Problem(data, u, WeightScheme.indicator(data.original, 2)), [0.0], SolverConfig())


def test_dimension_checks(g):
    data = logistic_data(g, n=20)
    with pytest.raises(DimensionMismatch):
        Problem(data, build(A_SPEC), WeightScheme(np.ones((19, 2)), "indicator-original"))
    with pytest.raises(DimensionMismatch):
        Problem(data, build(A_SPEC), WeightScheme(np.ones((20, 3)), "indicator-original"))
    with pytest.raises(ValueError):
        WeightScheme(np.ones((2, 2)), "mystery")


def test_auto_init_warm_start(g):
    from pram.core import invert_transition

    p = validate_transition([[0.8, 0.2], [0.2, 0.8]])
    data = logistic_data(g, n=500, p=p.entries)
    w = WeightScheme.inverse_transition(invert_transition(p), data.perturbed)
    b_auto, d_auto = solve(data, build(A_SPEC), w)
    b_zero, d_zero = solve(data, build(A_SPEC), w, SolverConfig(init=np.zeros(2)))
    assert d_auto.converged and d_zero.converged
    np.testing.assert_allclose(b_auto, b_zero, atol=1e-9)


def test_average_jacobian_and_inverse(g):
    data = logistic_data(g, n=200)
    w = WeightScheme.indicator(data.original, 2)
    beta, _ = solve(data, build(A_SPEC), w)
    omega = average_jacobian(data, build(A_SPEC), w, beta)
    assert np.all(np.linalg.eigvalsh(omega) < 0)
    np.testing.assert_allclose(invert_omega(omega) @ omega, np.eye(2), atol=1e-10)
    with pytest.raises(SingularOmega):
        invert_omega(np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]]))
