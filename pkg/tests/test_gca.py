import numpy as np
import pytest

from utils.config import GcaConfig, SimConfig
from utils.dgp import draw_population
from utils.errors import InvalidArgumentError, TrainingDivergenceError
from utils.gca import (build_features, embed_draws, forward, init_model, learned_exposure,
                       leave_own_out_exposure, load_model, propagation_matrix, save_model, train)
from utils.graph import Graph, rgg_generate
from utils.numerics import constant


def test_features_pack_treatment_and_covariate():
    M = build_features(np.array([1, 0]), np.array([0, 1]))
    np.testing.assert_array_equal(M.value, [[1.0, 0.0], [0.0, 1.0]])


def test_features_all_zero():
    assert np.all(build_features(np.zeros(4), np.zeros(4)).value == 0)


def test_features_length_mismatch():
    with pytest.raises(InvalidArgumentError):
        build_features(np.zeros(3), np.zeros(4))


def test_features_shape_on_simulated_draw():
    data = draw_population(SimConfig.for_setting("S1", 2000, seed=0))
    assert build_features(data.D, data.X).shape == (2000, 2)


def test_config_forces_scalar_embedding():
    assert GcaConfig(encoder_layer_dims=[8]).encoder_layer_dims == [8, 1]
    assert GcaConfig(encoder_layer_dims=[8, 1]).encoder_layer_dims == [8, 1]


def test_empty_graph_embedding_is_zero(empty_graph, rng):
    model = init_model(GcaConfig(seed=1), initial_bias=2.5)
    M = build_features(rng.binomial(1, 0.5, 4), rng.binomial(1, 0.5, 4))
    embedding, prediction = forward(model, empty_graph, M)
    assert np.all(embedding.value == 0)
    np.testing.assert_allclose(prediction.value, 2.5)


def test_single_layer_embedding_on_path(path_graph):
    model = init_model(GcaConfig(encoder_layer_dims=[1], hidden_activation="identity"))
    model.params["encoder_0"].value = np.array([[1.0], [0.0]])
    M = constant(np.column_stack([np.ones(3), np.zeros(3)]))
    embedding, _ = forward(model, path_graph, M)
    np.testing.assert_allclose(embedding.value.ravel(), [0.70711, 1.41421, 0.70711], atol=1e-5)


def test_isolated_node_embedding_ignores_own_features():
    g = Graph.from_edges(4, [(0, 1), (1, 2)])
    model = init_model(GcaConfig(seed=4))
    a = learned_exposure(model, g, np.array([1, 1, 0, 0]), np.array([1, 0, 1, 0]))
    b = learned_exposure(model, g, np.array([1, 1, 0, 1]), np.array([1, 0, 1, 1]))
    assert a.values[3] == 0.0 and b.values[3] == 0.0


def test_forward_rejects_mismatched_features(path_graph):
    model = init_model(GcaConfig())
    with pytest.raises(InvalidArgumentError):
        forward(model, path_graph, build_features(np.zeros(4), np.zeros(4)))


def test_constant_target_loss_decreases(rng):
    g = rgg_generate(40, 30.0, rng)
    D = rng.binomial(1, 0.5, 40)
    X = rng.binomial(1, 0.5, 40)
    model = train(g, D, X, np.full(40, 3.0), GcaConfig(epochs=100, seed=2))
    assert model.final_loss <= model.loss_history[0]
    _, prediction = forward(model, g, build_features(D, X))
    assert np.abs(prediction.value - 3.0).max() < 0.5


def test_training_is_deterministic():
    data = draw_population(SimConfig.for_setting("S1", 80, seed=11))
    cfg = GcaConfig(epochs=30, seed=5)
    a = train(data.graph, data.D, data.X, data.Y, cfg)
    b = train(data.graph, data.D, data.X, data.Y, cfg)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].value, b.params[name].value)
    assert a.loss_history == b.loss_history


def test_sgd_optimizer_trains():
    data = draw_population(SimConfig.for_setting("S1", 60, seed=2))
    model = train(data.graph, data.D, data.X, data.Y,
                  GcaConfig(epochs=50, optimizer="sgd", learning_rate=0.01, seed=1))
    assert np.isfinite(model.final_loss)


def test_divergent_training_raises():
    data = draw_population(SimConfig.for_setting("S1", 60, seed=2))
    cfg = GcaConfig(epochs=200, optimizer="sgd", learning_rate=1e6, seed=1)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergenceError) as err:
        train(data.graph, data.D, data.X, data.Y * 1e3, cfg)
    assert err.value.epoch >= 0


def test_training_needs_two_nodes():
    with pytest.raises(InvalidArgumentError):
        train(Graph.from_edges(1, []), np.ones(1), np.ones(1), np.ones(1), GcaConfig())


def test_model_file_round_trip(tmp_path):
    data = draw_population(SimConfig.for_setting("S2", 50, seed=3))
    model = train(data.graph, data.D, data.X, data.Y, GcaConfig(epochs=10, seed=3))
    path = save_model(model, tmp_path / "gca.npz")
    loaded = load_model(path)
    assert loaded.config == model.config
    assert loaded.loss_history == model.loss_history
    np.testing.assert_array_equal(
        learned_exposure(loaded, data.graph, data.D, data.X).values,
        learned_exposure(model, data.graph, data.D, data.X).values)


@pytest.mark.slow
def test_embedding_tracks_true_exposure_in_setting_one():
    correlations = []
    for seed in range(20):
        data = draw_population(SimConfig.for_setting("S1", 500, seed=seed))
        model = train(data.graph, data.D, data.X, data.Y, GcaConfig(seed=seed))
        z = learned_exposure(model, data.graph, data.D, data.X).values
        correlations.append(abs(np.corrcoef(z, data.Z_true)[0, 1]))
    assert np.mean(correlations) > 0.5


def test_batched_embeddings_match_single_forward(rng):
    g = rgg_generate(60, 5.0, rng)
    X = rng.binomial(1, 0.5, 60).astype(float)
    model = init_model(GcaConfig(seed=3))
    draws = rng.binomial(1, 0.6, (3, 60)).astype(float)
    batched = embed_draws(model, g, draws, X)
    assert batched.shape == (3, 60)
    for r in range(3):
        np.testing.assert_allclose(batched[r], learned_exposure(model, g, draws[r], X).values,
                                   atol=1e-10)


def test_leave_own_out_exposure_ignores_own_treatment(rng):
    g = rgg_generate(40, 5.0, rng)
    D = rng.binomial(1, 0.5, 40).astype(float)
    X = rng.binomial(1, 0.5, 40).astype(float)
    model = init_model(GcaConfig(seed=8))
    own_out = leave_own_out_exposure(model, g, D, X, batch=7).values
    for i in (0, 13, 39):
        flipped = D.copy()
        flipped[i] = 1.0 - D[i]
        assert leave_own_out_exposure(model, g, flipped, X).values[i] == pytest.approx(own_out[i])
        zeroed = D.copy()
        zeroed[i] = 0.0
        assert learned_exposure(model, g, zeroed, X).values[i] == pytest.approx(own_out[i])


def test_embedding_is_permutation_equivariant(rng):
    g = rgg_generate(50, 5.0, rng)
    D = rng.binomial(1, 0.5, 50).astype(float)
    X = rng.binomial(1, 0.5, 50).astype(float)
    model = init_model(GcaConfig(seed=2))
    perm = rng.permutation(50)
    base = learned_exposure(model, g, D, X).values
    permuted = learned_exposure(model, g.permute(perm), D[perm], X[perm]).values
    np.testing.assert_allclose(permuted, base[perm], atol=1e-10)


def test_single_layer_embedding_ignores_own_features():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (1, 3)])
    model = init_model(GcaConfig(encoder_layer_dims=[1], seed=6))
    D, X = np.array([1.0, 0.0, 1.0, 0.0]), np.array([0.0, 1.0, 1.0, 0.0])
    before = learned_exposure(model, g, D, X).values
    D[1], X[1] = 1.0, 0.0
    after = learned_exposure(model, g, D, X).values
    assert after[1] == pytest.approx(before[1])
    assert after[0] != pytest.approx(before[0])
