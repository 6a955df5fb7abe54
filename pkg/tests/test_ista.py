import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fed_unroll.data import generate_sensing_matrix, generate_sparse_vector
from fed_unroll.ista import (
    IstaConfig,
    default_lambda,
    default_step,
    ista_solve,
    ista_step,
    objective,
    soft_threshold,
    spectral_norm,
)
from oracles import prox_l1_grid


def test_soft_threshold_formula():
    assert soft_threshold([2.0, -0.5, 1.0], 1.0).tolist() == [1.0, 0.0, 0.0]


def test_soft_threshold_zero_and_full_shrinkage():
    v = np.array([0.3, -2.0, 0.0, 5.5])
    assert np.array_equal(soft_threshold(v, 0.0), v)
    assert np.array_equal(np.abs(soft_threshold(v, 5.5)), np.zeros(4))


def test_soft_threshold_negative_theta():
    with pytest.raises(ValueError):
        soft_threshold([1.0], -0.1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=6), st.floats(0, 3))
def test_soft_threshold_is_l1_prox(values, theta):
    expected = [prox_l1_grid(v, theta) for v in values]
    np.testing.assert_allclose(soft_threshold(values, theta), expected, atol=1e-6)
    out = soft_threshold(values, theta)
    np.testing.assert_allclose(np.abs(out), np.maximum(np.abs(values) - theta, 0.0), atol=0)


def test_spectral_norm_matches_svd():
    A = generate_sensing_matrix(20, 45, seed=3)
    assert spectral_norm(A) == pytest.approx(np.linalg.norm(A.entries, 2), rel=1e-6)
    assert default_step(A) == pytest.approx(0.9 / np.linalg.norm(A.entries, 2) ** 2, rel=1e-5)


def test_ista_step_fixed_point_without_penalty():
    A = generate_sensing_matrix(3, 6, seed=1)
    x = np.array([0.0, 1.0, 0.0, -2.0, 0.0, 0.5])
    y = A.entries @ x
    np.testing.assert_allclose(ista_step(A, y, x, 0.0, 0.5), x, atol=1e-14)


def test_ista_step_from_zero():
    A = generate_sensing_matrix(3, 6, seed=1)
    y = np.array([1.0, -0.5, 0.25])
    lam, t = 0.3, 0.4
    np.testing.assert_allclose(ista_step(A, y, np.zeros(6), lam, t), soft_threshold(t * A.entries.T @ y, lam * t), atol=1e-15)


def test_ista_step_dimension_mismatch():
    A = generate_sensing_matrix(3, 6, seed=1)
    with pytest.raises(ValueError):
        ista_step(A, np.zeros(4), np.zeros(6), 0.1, 0.1)


def test_objective_non_increasing_small_instance():
    A = generate_sensing_matrix(3, 6, seed=4)
    x_true = np.array([0, 1.2, 0, 0, -0.7, 0])
    y = A.entries @ x_true
    lam = 0.05
    t = 0.9 / np.linalg.norm(A.entries, 2) ** 2
    x = np.zeros(6)
    prev = objective(A, y, x, lam)
    for _ in range(100):
        x = ista_step(A, y, x, lam, t)
        cur = objective(A, y, x, lam)
        assert cur <= prev + 1e-12
        prev = cur


def test_ista_recovers_sparse_signal():
    A = generate_sensing_matrix(30, 60, seed=2)
    x = np.zeros(60)
    x[[4, 17, 41]] = [1.5, -2.0, 1.0]
    y = A.entries @ x
    x_hat, _ = ista_solve(A, y, IstaConfig(lam=1e-2, iters=1000))
    assert np.linalg.norm(x_hat - x) / np.linalg.norm(x) < 0.1


def test_ista_solve_returns_every_iterate():
    A = generate_sensing_matrix(10, 20, seed=5)
    y = A.entries @ generate_sparse_vector(20, 0.2, seed=1)
    x_hat, path = ista_solve(A, y, IstaConfig(iters=7))
    assert len(path) == 7
    assert np.array_equal(path[-1], x_hat)
    lam, t = IstaConfig().resolve(A, y)
    assert lam == pytest.approx(0.1 * np.max(np.abs(A.entries.T @ y)))
    np.testing.assert_array_equal(path[0], ista_step(A, y, np.zeros(20), lam, t))


def test_default_lambda_heuristic():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert default_lambda(A, [3.0, -4.0]) == pytest.approx(0.4)


@pytest.mark.parametrize("kwargs", [{"lam": -1.0}, {"step": 0.0}, {"iters": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        IstaConfig(**kwargs)
