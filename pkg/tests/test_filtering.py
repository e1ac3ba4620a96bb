import inspect
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from impfilter.energy import EnergyParams
from impfilter.filtering import (FilterConfig, ScoredEntry, beta_schedule, decide_transmit,
                                 euclidean_distance, init_node, knn_estimate, knn_estimate_batch,
                                 refresh_buffer, transmit_probability, transmit_weights)


def _node(P=16, L=3, R=0.3, seed=0, n=2, **kw):
    cfg = FilterConfig(buffer_size=P, neighbors=L, target_rate=R, **kw)
    rng = np.random.default_rng(seed)
    return init_node(0, rng.random((P, n)), cfg, np.random.default_rng(seed + 100)), cfg


def test_euclidean_distance():
    a = np.array([0.3, -1.2, 4.0])
    assert euclidean_distance(a, a) == 0.0
    assert euclidean_distance([0, 0], [3, 4]) == 5.0
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=(2, 6))
    assert euclidean_distance(u, v) == euclidean_distance(v, u)
    with pytest.raises(ValueError):
        euclidean_distance([0, 0], [0, 0, 0])


def test_knn_constant_scores():
    rng = np.random.default_rng(1)
    buf = [ScoredEntry(x, 2.5) for x in rng.random((10, 3))]
    for q in rng.random((5, 3)):
        assert knn_estimate(q, buf, 4) == 2.5


def test_knn_single_neighbour_at_buffer_point():
    rng = np.random.default_rng(2)
    X = rng.random((8, 2))
    s = rng.random(8)
    assert knn_estimate(X[5], (X, s), 1) == s[5]


def test_knn_hand_example():
    buf = [ScoredEntry(np.array([0.0]), 1.0), ScoredEntry(np.array([1.0]), 2.0),
           ScoredEntry(np.array([10.0]), 9.0)]
    assert knn_estimate(np.array([0.4]), buf, 2) == 1.5


def test_knn_ties_go_to_lower_index():
    X = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    s = np.array([1.0, 2.0, 3.0, 4.0])
    # all four at distance 1 from the origin; the first two indices win
    assert knn_estimate(np.array([0.0]), (X, s), 2) == 1.5


def test_knn_accepts_node_and_batch():
    node, cfg = _node()
    node.buffer_s = np.arange(16, dtype=float)
    Q = np.random.default_rng(3).random((7, 2))
    batch = knn_estimate_batch(Q, node, 3)
    assert_array_equal(batch, [knn_estimate(q, node.buffer, 3) for q in Q])


def test_knn_rejects_bad_L():
    X = np.zeros((4, 2))
    with pytest.raises(ValueError):
        knn_estimate(np.zeros(2), (X, np.ones(4)), 5)
    with pytest.raises(ValueError):
        knn_estimate(np.zeros(2), (X, np.ones(4)), 0)


def test_scored_entry_rejects_negative_score():
    with pytest.raises(ValueError):
        ScoredEntry(np.zeros(2), -0.1)


def test_beta_schedule_examples():
    cfg = FilterConfig(beta_min=0.0, beta_max=1.0, anneal_intervals=10)
    assert beta_schedule(0, cfg) == 0.0
    assert beta_schedule(5, cfg) == 0.5
    assert beta_schedule(13, cfg) == 1.0


def test_beta_schedule_monotone_and_clamped():
    cfg = FilterConfig(beta_min=0.2, beta_max=3.0, anneal_intervals=7)
    betas = [beta_schedule(k, cfg) for k in range(20)]
    assert all(a <= b for a, b in zip(betas, betas[1:]))
    assert min(betas) == 0.2 and max(betas) == 3.0


def test_transmit_probability_beta_zero_is_one_over_p():
    scores = np.random.default_rng(4).random(16) * 10
    assert transmit_probability(7.3, scores, 0.0) == 1.0 / 16


def test_transmit_probability_relative_weight_example():
    assert transmit_probability(math.log(2.0), [0.0, 0.0], 1.0) == pytest.approx(1.0, rel=1e-15)


def test_transmit_probability_normalised_over_buffer():
    scores = np.random.default_rng(5).random(32) * 4
    for beta in (0.0, 0.5, 3.0):
        assert transmit_probability(scores, scores, beta).sum() == pytest.approx(1.0, rel=1e-12)


def test_transmit_probability_handles_large_beta():
    scores = np.array([0.0, 800.0, 799.0])
    q = transmit_probability(800.0, scores, 1.0)
    assert np.isfinite(q) and 0 < q < 1
    with pytest.raises(ValueError):
        transmit_probability(float("nan"), scores, 1.0)


def test_decide_transmit_rate_one_always():
    node, cfg = _node(R=1.0, beta_max=0.0)
    X = np.random.default_rng(6).random((500, 2))
    assert all(decide_transmit(x, node, cfg) for x in X)


def test_higher_estimate_higher_weight():
    node, cfg = _node(beta_min=1.0, beta_max=1.0)
    node.buffer_x = np.vstack([np.zeros((8, 2)), np.ones((8, 2))])
    node.buffer_s = np.concatenate([np.full(8, 0.1), np.full(8, 5.0)])
    w = transmit_weights(np.array([[0.0, 0.0], [1.0, 1.0]]), node, cfg)
    assert w[1] > w[0]


def test_decide_transmit_never_sees_labels():
    # the decision takes a feature vector and node state only
    assert list(inspect.signature(decide_transmit).parameters) == ["x_t", "node", "config"]


def test_refresh_full_replacement():
    node, _ = _node(P=4)
    fb = [ScoredEntry(np.array([i, i], dtype=float), float(i)) for i in range(4)]
    refresh_buffer(node, fb)
    assert_array_equal(node.buffer_s, [0, 1, 2, 3])
    assert node.interval_index == 1


def test_refresh_empty_feedback():
    node, _ = _node(P=4)
    before = node.buffer_x.copy()
    refresh_buffer(node, [])
    assert_array_equal(node.buffer_x, before)
    assert node.interval_index == 1
    assert node.energy.rx == 1


def test_refresh_fifo_by_hand():
    node, _ = _node(P=4)
    a = [ScoredEntry(np.array([1.0, 1.0]), 1.0), ScoredEntry(np.array([2.0, 2.0]), 2.0)]
    b = [ScoredEntry(np.array([3.0, 3.0]), 3.0), ScoredEntry(np.array([4.0, 4.0]), 4.0)]
    refresh_buffer(node, a)
    refresh_buffer(node, b)
    assert_array_equal(node.buffer_s, [1, 2, 3, 4])
    assert_array_equal(node.buffer_x[:, 0], [1, 2, 3, 4])
    refresh_buffer(node, [ScoredEntry(np.array([5.0, 5.0]), 5.0)])
    assert_array_equal(node.buffer_s, [2, 3, 4, 5])


def test_refresh_rejects_oversized_feedback():
    node, _ = _node(P=4)
    with pytest.raises(ValueError):
        refresh_buffer(node, [ScoredEntry(np.zeros(2), 1.0)] * 5)


def test_init_node_scores_one():
    node, cfg = _node(P=8, L=3)
    assert_array_equal(node.buffer_s, np.ones(8))
    assert node.energy.params == EnergyParams()
    with pytest.raises(ValueError):
        init_node(0, np.zeros((7, 2)), cfg, np.random.default_rng(0))


def test_filter_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(buffer_size=8, neighbors=8)
    with pytest.raises(ValueError):
        FilterConfig(target_rate=0.0)
    with pytest.raises(ValueError):
        FilterConfig(beta_min=2.0, beta_max=1.0)
    with pytest.warns(UserWarning):
        FilterConfig(buffer_size=256, neighbors=2)


def test_weights_calibrated_to_rate_at_beta_zero():
    node, cfg = _node(R=0.3, beta_max=0.0)
    w = transmit_weights(np.random.default_rng(7).random((10, 2)), node, cfg)
    assert_allclose(w, 0.3, rtol=1e-15)
