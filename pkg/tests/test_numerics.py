import numpy as np
import pytest

from utils.config import GcaConfig
from utils.errors import InvalidArgumentError
from utils.gca import build_features, forward, init_model, propagation_matrix
from utils.graph import normalized_adjacency, rgg_generate
from utils.numerics import (ParameterSet, adam_step, backward, constant, finite_difference_gradients,
                            glorot_init, identity, matmul, mse_loss, relu, sgd_step, take_rows,
                            total)


def test_identity_product():
    m = constant(np.arange(6.0).reshape(3, 2))
    np.testing.assert_array_equal((identity(3) @ m).value, m.value)


def test_scalar_product():
    assert matmul(constant([[2.0]]), constant([[3.0]])).value[0, 0] == 6.0


def test_path_adjacency_times_ones(path_graph):
    a_hat = constant(normalized_adjacency(path_graph).normalized_adjacency)
    out = a_hat @ constant(np.ones((3, 1)))
    np.testing.assert_allclose(out.value.ravel(), [0.70711, 1.41421, 0.70711], atol=1e-5)


def test_matmul_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))


def test_add_rejects_incompatible_shapes():
    with pytest.raises(InvalidArgumentError):
        constant(np.ones((3, 2))) + constant(np.ones((2, 2)))


def test_constant_rejects_non_finite():
    with pytest.raises(InvalidArgumentError):
        constant([[np.nan]])


def test_sum_loss_gives_unit_gradients():
    params = ParameterSet()
    w = params.add("w", np.arange(6.0).reshape(2, 3))
    backward(total(w))
    np.testing.assert_array_equal(w.grad, np.ones((2, 3)))


def test_mse_at_target_has_zero_gradient():
    params = ParameterSet()
    w = params.add("w", [[1.5], [-2.0]])
    backward(mse_loss(w, constant([[1.5], [-2.0]])))
    np.testing.assert_array_equal(w.grad, np.zeros((2, 1)))


def test_backward_requires_scalar_loss():
    params = ParameterSet()
    w = params.add("w", np.ones((2, 2)))
    with pytest.raises(InvalidArgumentError):
        backward(w @ w)


def test_shared_parameter_gradients_accumulate():
    params = ParameterSet()
    w = params.add("w", [[3.0]])
    backward(total(w @ w))
    assert w.grad[0, 0] == pytest.approx(6.0)


def test_relu_gradient_masks_negatives():
    params = ParameterSet()
    w = params.add("w", [[-1.0], [2.0]])
    backward(total(relu(w)))
    np.testing.assert_array_equal(w.grad, [[0.0], [1.0]])


def test_take_rows_scatters_gradient():
    params = ParameterSet()
    w = params.add("w", np.arange(4.0).reshape(4, 1))
    backward(total(take_rows(w, np.array([0, 0, 3]))))
    np.testing.assert_array_equal(w.grad.ravel(), [2.0, 0.0, 0.0, 1.0])


def test_adam_zero_gradient_leaves_parameters():
    params = ParameterSet()
    w = params.add("w", [[0.3, -0.2]])
    w.grad = np.zeros((1, 2))
    adam_step(params, lr=0.01)
    np.testing.assert_array_equal(w.value, [[0.3, -0.2]])


def test_adam_first_step_moves_by_learning_rate():
    params = ParameterSet()
    w = params.add("w", [[1.0]])
    w.grad = np.array([[1.0]])
    adam_step(params, lr=0.01)
    assert w.value[0, 0] == pytest.approx(1.0 - 0.01, abs=1e-9)
    assert w.grad is None


def test_adam_is_deterministic():
    def run():
        params = ParameterSet()
        w = params.add("w", [[0.5, 1.0]])
        for _ in range(3):
            w.grad = np.array([[0.2, -0.7]])
            adam_step(params, lr=0.05)
        return w.value

    np.testing.assert_array_equal(run(), run())


def test_sgd_step():
    params = ParameterSet()
    w = params.add("w", [[1.0]])
    w.grad = np.array([[2.0]])
    sgd_step(params, lr=0.1)
    assert w.value[0, 0] == pytest.approx(0.8)


def test_glorot_same_seed_same_matrix():
    a = glorot_init(4, 3, np.random.default_rng(1))
    b = glorot_init(4, 3, np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("rows, cols", [(10, 10), (1, 1), (2, 16)])
def test_glorot_bounds(rows, cols):
    w = glorot_init(rows, cols, np.random.default_rng(3))
    assert np.all(np.abs(w) <= np.sqrt(6.0 / (rows + cols)))


def _gca_gradient_check(seed: int, n: int, activation: str):
    rng = np.random.default_rng(seed)
    g = rgg_generate(n, 30.0, rng)
    D = rng.binomial(1, 0.6, n).astype(float)
    X = rng.binomial(1, 0.5, n).astype(float)
    Y = rng.normal(size=n)
    cfg = GcaConfig(encoder_layer_dims=[3, 1], hidden_activation=activation, seed=seed)
    model = init_model(cfg, initial_bias=0.1)
    a_hat = propagation_matrix(g)
    M = build_features(D, X)
    target = constant(Y)

    def loss_fn():
        return mse_loss(forward(model, a_hat, M)[1], target)

    backward(loss_fn())
    analytic = model.params.gradients()
    numeric = finite_difference_gradients(loss_fn, model.params, step=1e-5)
    for name in analytic:
        np.testing.assert_allclose(analytic[name], numeric[name], rtol=1e-5, atol=1e-8,
                                   err_msg=f"{name} (seed {seed})")


def test_gradients_match_finite_differences_on_six_nodes():
    _gca_gradient_check(seed=0, n=6, activation="relu")


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences_on_small_graphs(seed):
    activation = "identity" if seed % 2 else "relu"
    _gca_gradient_check(seed=100 + seed, n=4 + seed % 7, activation=activation)


def test_matmul_association_order_gives_same_values_and_gradients(rng):
    a = constant(rng.normal(size=(5, 5)))
    h_value, w_value = rng.normal(size=(5, 3)), rng.normal(size=(3, 2))
    results = []
    for left_first in (True, False):
        params = ParameterSet()
        h, w = params.add("h", h_value), params.add("w", w_value)
        out = matmul(matmul(a, h), w) if left_first else matmul(a, matmul(h, w))
        backward(total(out))
        results.append((out.value, h.grad.copy(), w.grad.copy()))
    for left, right in zip(*results):
        np.testing.assert_allclose(left, right, atol=1e-12)
