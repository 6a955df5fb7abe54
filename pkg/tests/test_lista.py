import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fed_unroll.data import Dataset, Sample, build_dataset, generate_sensing_matrix
from fed_unroll.ista import default_step, ista_step
from fed_unroll.lista import (
    LayerParams,
    NetworkParams,
    backward,
    dumps_layer,
    dumps_network,
    forward,
    init_layer,
    ista_network,
    loads_layer,
    loads_network,
    loss,
    loss_and_grad,
    sgd_step,
)
from fed_unroll.textio import FormatError
from oracles import central_difference, flat_get, kink_margin, naive_forward, naive_loss, random_network


@pytest.fixture
def small_problem():
    A = generate_sensing_matrix(4, 8, seed=3)
    return A, build_dataset(A, 5, 0.3, seed=9)


def test_ista_init_threshold_is_lambda_times_step():
    A = generate_sensing_matrix(5, 10, seed=1)
    layer = init_layer(5, 10, A, "ista_init", lam=0.37, step=0.21)
    assert layer.theta == 0.37 * 0.21
    np.testing.assert_array_equal(layer.V, 0.21 * A.entries.T)
    auto = init_layer(5, 10, A, "ista_init", lam=0.5)
    assert auto.theta == pytest.approx(0.5 * default_step(A))


def test_ista_init_with_orthonormal_rows_projects_out_row_space():
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 2)))
    A = q.T  # 2 x 4, orthonormal rows
    W = init_layer(2, 4, A, "ista_init", step=1.0).W
    np.testing.assert_allclose(W @ A.T, 0.0, atol=1e-15)
    np.testing.assert_allclose(W @ W, W, atol=1e-15)
    np.testing.assert_allclose(W, np.eye(4) - A.T @ A, atol=0)


def test_ista_init_requires_matrix():
    with pytest.raises(ValueError):
        init_layer(2, 4, None, "ista_init")


def test_random_init_is_deterministic():
    a = init_layer(3, 7, mode="random", seed=12)
    b = init_layer(3, 7, mode="random", seed=12)
    assert a.equals(b)
    assert a.theta == 0.05
    assert not a.equals(init_layer(3, 7, mode="random", seed=13))


def test_perturbed_init_is_seeded():
    A = generate_sensing_matrix(3, 6, seed=0)
    a = init_layer(3, 6, A, perturb=1e-3, seed=4)
    assert a.equals(init_layer(3, 6, A, perturb=1e-3, seed=4))
    assert not a.equals(init_layer(3, 6, A, perturb=1e-3, seed=5))


def test_empty_network_returns_x0():
    x0 = np.array([1.0, -2.0])
    trace = forward(NetworkParams(), np.zeros(3), x0)
    assert np.array_equal(trace.final, x0)
    assert trace.x_hat == []


def test_zero_layer_outputs_zero():
    layer = LayerParams(np.zeros((4, 2)), np.zeros((4, 4)), 0.7)
    trace = forward(NetworkParams([layer]), np.array([1.0, 2.0]))
    assert np.array_equal(trace.final, np.zeros(4))


def test_one_ista_layer_equals_one_ista_step():
    A = generate_sensing_matrix(6, 12, seed=2)
    y = np.random.default_rng(1).normal(size=6)
    x0 = np.random.default_rng(2).normal(size=12)
    net = ista_network(A, 1, lam=0.2)
    t = default_step(A)
    np.testing.assert_allclose(forward(net, y, x0).final, ista_step(A, y, x0, 0.2, t), atol=1e-12)


def test_batched_forward_matches_per_sample_loop():
    rng = np.random.default_rng(5)
    net = random_network(rng, 3, 4, 7)
    Y = rng.normal(size=(6, 4))
    trace = forward(net, Y)
    for s in range(6):
        for i, est in enumerate(naive_forward(net, Y[s])):
            np.testing.assert_allclose(trace.x_hat[i][s], est, atol=1e-13)


def test_forward_dimension_checks():
    net = random_network(np.random.default_rng(0), 1, 3, 5)
    with pytest.raises(ValueError):
        forward(net, np.zeros(4))
    with pytest.raises(ValueError):
        forward(net, np.zeros(3), np.zeros(6))


def test_loss_zero_on_perfect_fit():
    # V routes y straight to x with theta = 0
    V = np.eye(3)
    net = NetworkParams([LayerParams(V, np.zeros((3, 3)), 0.0)] * 2)
    x = np.array([[1.0, 0.0, -2.0]])
    assert loss(net, Dataset(x, x)) == 0.0


def test_loss_of_zero_network():
    net = NetworkParams([LayerParams(np.zeros((3, 2)), np.zeros((3, 3)), 0.1)])
    x = np.array([1.0, -2.0, 0.5])
    assert loss(net, [Sample(x, np.array([1.0, 1.0]))]) == pytest.approx(float(x @ x))


def test_loss_matches_naive_summation(small_problem):
    A, data = small_problem
    net = random_network(np.random.default_rng(3), 2, 4, 8)
    batch = data.head(3)
    assert loss(net, batch) == pytest.approx(naive_loss(net, batch.x, batch.y), rel=1e-12)
    assert loss(net, batch, "last_layer") == pytest.approx(naive_loss(net, batch.x, batch.y, last_only=True), rel=1e-12)


def test_loss_is_additive_over_batches(small_problem):
    _, data = small_problem
    net = random_network(np.random.default_rng(4), 3, 4, 8)
    whole = loss(net, data)
    parts = loss(net, data.subset([0, 1])) + loss(net, data.subset([2, 3, 4]))
    assert whole == pytest.approx(parts, rel=1e-12)


def test_loss_rejects_empty_batch():
    net = random_network(np.random.default_rng(0), 1, 2, 3)
    with pytest.raises(ValueError):
        loss(net, [])
    with pytest.raises(ValueError):
        backward(net, [])


def test_gradient_vanishes_at_perfect_fit():
    V = np.eye(3)
    net = NetworkParams([LayerParams(V, np.zeros((3, 3)), 0.0), LayerParams(V, np.zeros((3, 3)), 0.0)])
    x = np.array([[1.0, -0.5, 2.0]])
    grads = backward(net, Dataset(x, x))
    for g in grads:
        assert not g.V.any() and not g.W.any() and g.theta == 0.0


def test_single_layer_gradient_hand_formula():
    V = np.array([[0.5, -0.2, 0.1], [0.3, 0.4, -0.6]])
    W = np.array([[0.9, 0.1], [-0.2, 0.8]])
    theta = 0.15
    y = np.array([1.0, -1.0, 0.5])
    x0 = np.array([0.2, -0.1])
    x = np.array([0.4, 0.0])
    z = V @ y + W @ x0
    xh = np.sign(z) * np.maximum(np.abs(z) - theta, 0)
    mask = (np.abs(z) > theta).astype(float)
    r = x - xh
    expected_V = -2 * np.outer(mask * r, y)
    expected_W = -2 * np.outer(mask * r, x0)
    expected_theta = 2 * np.sum(mask * r * np.sign(z))
    net = NetworkParams([LayerParams(V, W, theta)])
    g = backward(net, (x[None], y[None]), x0=x0[None])[0]
    np.testing.assert_allclose(g.V, expected_V, atol=1e-15)
    np.testing.assert_allclose(g.W, expected_W, atol=1e-15)
    assert g.theta == pytest.approx(expected_theta, abs=1e-15)


def _fd_check(rng, L, M, N, B, which, n_coords=50):
    while True:
        net = random_network(rng, L, M, N)
        xs = rng.normal(size=(B, N)) * (rng.random((B, N)) < 0.5)
        ys = rng.normal(size=(B, M))
        if kink_margin(net, ys) > 1e-4:
            break
    mode = "sum_layers" if which == "all_layers" else "last_layer"
    grads = backward(net, (xs, ys), which)
    f = lambda p: naive_loss(p, xs, ys, last_only=(mode == "last_layer"))  # noqa: E731
    worst = 0.0
    for _ in range(n_coords):
        i = int(rng.integers(L))
        kind = str(rng.choice(["V", "W", "theta"]))
        idx = None if kind == "theta" else tuple(int(rng.integers(d)) for d in getattr(net[i], kind).shape)
        fd = central_difference(f, net, i, kind, idx)
        g = flat_get(grads, i, kind, idx)
        err = abs(g - fd) / max(abs(g), abs(fd), 1e-3)
        worst = max(worst, err)
    return worst


@pytest.mark.parametrize("which", ["all_layers", "last_layer_only"])
def test_gradients_match_finite_differences(which):
    rng = np.random.default_rng(2024)
    for _ in range(5):
        L, M = int(rng.integers(1, 4)), int(rng.integers(2, 5))
        N = int(rng.integers(M + 1, 9))
        assert _fd_check(rng, L, M, N, int(rng.integers(1, 5)), which) < 1e-4


def test_last_layer_only_ignores_lower_layer_residuals():
    rng = np.random.default_rng(8)
    net = random_network(rng, 2, 3, 5)
    xs, ys = rng.normal(size=(2, 5)), rng.normal(size=(2, 3))
    full = backward(net, (xs, ys), "all_layers")
    top = backward(net, (xs, ys), "last_layer_only")
    np.testing.assert_allclose(full[1].V, top[1].V, atol=1e-14)
    assert not np.allclose(full[0].V, top[0].V)


def test_backward_rejects_unknown_mode():
    net = random_network(np.random.default_rng(0), 1, 2, 3)
    with pytest.raises(ValueError):
        backward(net, (np.zeros((1, 3)), np.zeros((1, 2))), "middle")


def test_sgd_step_trivial_cases(small_problem):
    _, data = small_problem
    net = random_network(np.random.default_rng(1), 2, 4, 8)
    grads = backward(net, data)
    assert sgd_step(net, grads, 0.0).equals(net)
    zero = NetworkParams([LayerParams(np.zeros_like(g.V), np.zeros_like(g.W), 0.0) for g in grads])
    assert sgd_step(net, zero, 0.3).equals(net)


def test_sgd_step_descends(small_problem):
    _, data = small_problem
    net = random_network(np.random.default_rng(6), 1, 4, 8)
    before = loss(net, data)
    after = loss(sgd_step(net, backward(net, data), 1e-6), data)
    assert after < before


def test_sgd_step_clamps_threshold():
    layer = LayerParams(np.zeros((2, 1)), np.zeros((2, 2)), 0.1)
    grad = LayerParams(np.zeros((2, 1)), np.zeros((2, 2)), 5.0)
    out = sgd_step(NetworkParams([layer]), NetworkParams([grad]), 1.0)
    assert out[0].theta == 0.0


def test_sgd_step_per_layer_rates_and_theta_scale():
    layer = LayerParams(np.ones((2, 1)), np.ones((2, 2)), 1.0)
    grad = LayerParams(np.ones((2, 1)), np.ones((2, 2)), 1.0)
    out = sgd_step(NetworkParams([layer, layer]), NetworkParams([grad, grad]), [0.5, 0.1], theta_lr_scale=0.1)
    assert out[0].V[0, 0] == 0.5 and out[1].V[0, 0] == 0.9
    assert out[0].theta == pytest.approx(0.95) and out[1].theta == pytest.approx(0.99)


def test_sgd_step_shape_mismatch():
    net = random_network(np.random.default_rng(0), 2, 2, 3)
    with pytest.raises(ValueError):
        sgd_step(net, NetworkParams(net.layers[:1]), 0.1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3), st.integers(1, 4), st.integers(0, 10_000))
def test_checkpoint_roundtrip_is_bit_exact(L, M, seed):
    net = random_network(np.random.default_rng(seed), L, M, M + 2)
    text = dumps_network(net)
    back = loads_network(text)
    assert back.equals(net)
    assert dumps_network(back) == text


def test_checkpoint_layout():
    layer = LayerParams(np.array([[1.0], [2.0]]), np.array([[0.5, 0.0], [0.0, 0.25]]), 0.125)
    assert dumps_network(NetworkParams([layer])) == "1 1 2\n0.125\n1.0\n2.0\n0.5 0.0\n0.0 0.25\n"
    assert loads_layer(dumps_layer(layer)).equals(layer)


@pytest.mark.parametrize("text", ["1 1 2\n0.1\n1 2\n3 4\n", "1 1 2\n-0.1\n1\n2\n3 4\n5 6\n", "1 1 2\n0.1\n1\n2\n3 4\n5 6\n7\n"])
def test_checkpoint_parse_errors(text):
    with pytest.raises(FormatError):
        loads_network(text)


def test_loads_layer_requires_single_layer():
    net = random_network(np.random.default_rng(0), 2, 2, 3)
    with pytest.raises(FormatError):
        loads_layer(dumps_network(net))


def test_loss_and_grad_consistent_with_loss(small_problem):
    _, data = small_problem
    net = random_network(np.random.default_rng(2), 3, 4, 8)
    value, _ = loss_and_grad(net, data)
    assert value == loss(net, data)
