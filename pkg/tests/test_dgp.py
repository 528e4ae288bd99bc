import numpy as np
import pandas as pd
import pytest

from utils.config import Setting, SimConfig
from utils.dgp import (counterfactual_outcome, draw_population, export_dataset, treatment_probability,
                       true_exposure)
from utils.errors import InvalidArgumentError
from utils.graph import Graph, read_edge_list


def test_treatment_probability_values():
    np.testing.assert_allclose(treatment_probability(np.array([1.0, 0.0])),
                               [0.95257, 0.73106], atol=1e-5)


def test_pure_noise_outcome_centres_on_intercept():
    cfg = SimConfig(n=2000, setting=Setting.S1, alpha=-1.0, delta=0.0, gamma=0.0, xi=0.0, seed=3)
    data = draw_population(cfg)
    assert abs(data.Y.mean() + 1.0) < 3 / np.sqrt(cfg.n)


def test_outcome_follows_linear_model():
    cfg = SimConfig.for_setting("S2", 300, seed=9)
    data = draw_population(cfg)
    expected = -1.0 + 5.0 * data.Z_true + data.D + data.X + data.noise
    np.testing.assert_allclose(data.Y, expected)


def test_same_seed_same_population():
    cfg = SimConfig.for_setting("S1", 200, seed=5)
    a, b = draw_population(cfg), draw_population(cfg)
    np.testing.assert_array_equal(a.Y, b.Y)
    np.testing.assert_array_equal(a.graph.adjacency, b.graph.adjacency)


def test_setting_binds_radius_constant():
    assert SimConfig.for_setting("S1", 100).radius_constant == 30.0
    assert SimConfig.for_setting("DIRECT", 100).radius_constant == 5.0
    assert SimConfig.for_setting("DIRECT", 100, radius_constant=8.0).radius_constant == 8.0


def test_s1_exposure_on_path(path_graph):
    Z = true_exposure(Setting.S1, path_graph, np.array([1, 0, 1]), np.array([1, 1, 0]))
    assert Z[1] == pytest.approx(0.5)


def test_s1_isolated_node_has_zero_exposure():
    g = Graph.from_edges(3, [(0, 1)])
    Z = true_exposure(Setting.S1, g, np.ones(3), np.ones(3))
    assert Z[2] == 0.0


def test_s2_adds_second_order_share(path_graph):
    # node 0: neighbour 1 untreated, second-order node 2 treated and eligible
    Z = true_exposure(Setting.S2, path_graph, np.array([0, 0, 1]), np.array([1, 1, 1]))
    assert Z[0] == pytest.approx(0.0 + 1.0)
    assert Z[1] == pytest.approx(0.5)


def test_s3_saturation_value():
    n = 13
    g = Graph.from_edges(n, [(0, k) for k in range(1, n)])
    Z = true_exposure(Setting.S3, g, np.ones(n), np.ones(n))
    assert Z[0] == pytest.approx(1 - np.exp(-1.0), abs=1e-5)
    # leaves see one treated neighbour, below the offset
    assert np.all(Z[1:] == 0.0)


def test_direct_threshold_is_strict(star):
    D = np.array([0, 1, 1, 0, 0])
    X = np.ones(5)
    assert true_exposure(Setting.DIRECT, star, D, X)[0] == 0.0
    D[3] = 1
    assert true_exposure(Setting.DIRECT, star, D, X)[0] == 1.0


def test_exposure_length_mismatch(path_graph):
    with pytest.raises(InvalidArgumentError):
        true_exposure(Setting.S1, path_graph, np.ones(2), np.ones(3))


def test_counterfactual_contrasts():
    cfg = SimConfig.for_setting("S1", 50, seed=1)
    data = draw_population(cfg)
    i = 7
    assert (counterfactual_outcome(cfg, data, i, 1, 0.3)
            - counterfactual_outcome(cfg, data, i, 0, 0.3)) == pytest.approx(1.0)
    assert (counterfactual_outcome(cfg, data, i, 0, 1.0)
            - counterfactual_outcome(cfg, data, i, 0, 0.0)) == pytest.approx(5.0)
    realized = counterfactual_outcome(cfg, data, i, int(data.D[i]), data.Z_true[i])
    assert realized == pytest.approx(data.Y[i])


def test_counterfactual_index_out_of_range():
    cfg = SimConfig.for_setting("S1", 10, seed=1)
    with pytest.raises(InvalidArgumentError):
        counterfactual_outcome(cfg, draw_population(cfg), 10, 1, 0.0)


def test_export_dataset(tmp_path):
    data = draw_population(SimConfig.for_setting("DIRECT", 80, seed=2))
    csv_path, graph_path = export_dataset(data, tmp_path / "out" / "data.csv")
    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == ["id", "Y", "D", "X", "Z_true"]
    assert len(frame) == 80
    assert read_edge_list(graph_path).edge_count == data.graph.edge_count


@pytest.mark.parametrize("setting,low,high", [("S1", 0.0, 1.0), ("S2", 0.0, 2.0),
                                              ("S3", 0.0, 1.0), ("DIRECT", 0.0, 1.0)])
def test_exposure_ranges(setting, low, high):
    data = draw_population(SimConfig.for_setting(setting, 1000, seed=2))
    assert data.Z_true.min() >= low
    assert data.Z_true.max() <= high
    if setting == "DIRECT":
        assert set(np.unique(data.Z_true)) <= {0.0, 1.0}


def test_treated_share_among_eligible_units():
    data = draw_population(SimConfig.for_setting("S1", 10000, seed=5))
    assert abs(data.D[data.X == 1].mean() - 0.95257) < 0.02
    assert abs(data.D[data.X == 0].mean() - 0.73106) < 0.02
