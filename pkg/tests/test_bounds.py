import math

import numpy as np
import pytest

from impfilter import model as nn
from impfilter.bounds import (BoundReport, check_bounds, empirical_moduli, eta_bias, eta_variance,
                              log_condition, model_score_fn, radius_check)


def test_eta_bias_examples():
    assert eta_bias(1, 16, 4) == pytest.approx(0.5, rel=1e-15)
    assert eta_bias(15, 16, 2) < 1.0
    assert eta_bias(2, 16, 10_000) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ValueError):
        eta_bias(16, 16, 2)


def test_eta_bias_monotone():
    assert eta_bias(3, 64, 2) < eta_bias(4, 64, 2)
    assert eta_bias(4, 128, 2) < eta_bias(4, 64, 2)


def test_eta_variance_examples():
    assert eta_variance(2, math.e ** 2) == pytest.approx(1.0, rel=1e-15)
    assert eta_variance(4, 100) == pytest.approx(eta_variance(2, 100) / math.sqrt(2), rel=1e-15)


def test_log_condition_flag():
    assert log_condition(8, 256)
    with pytest.warns(UserWarning):
        assert not log_condition(2, 256)


def test_moduli_constant_field_and_zero_radius():
    rng = np.random.default_rng(0)
    X = rng.random((20, 2))
    assert empirical_moduli(X, np.full(20, 3.0), X[0], 3.0, 0.5) == (0.0, 0.0)
    s = rng.random(20)
    assert empirical_moduli(X, s, X[0], s[0], 0.0) == (0.0, 0.0)


def test_moduli_hand_dataset():
    X = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.2], [0.5, 0.5], [0.05, 0.05]])
    s = np.array([1.0, 1.4, 0.7, 9.0, 1.1])
    x_t, s_t, r = np.array([0.0, 0.0]), 1.0, 0.25
    up, down = 0.0, 0.0
    for xi, si in zip(X, s):
        if math.dist(xi, x_t) <= r:
            up = max(up, si - s_t)
            down = max(down, s_t - si)
    assert empirical_moduli(X, s, x_t, s_t, r) == (up, down)
    assert (up, down) == pytest.approx((0.4, 0.3))


def test_moduli_grow_with_radius():
    rng = np.random.default_rng(1)
    X = rng.random((50, 2))
    s = rng.random(50)
    prev = (0.0, 0.0)
    for r in np.linspace(0, 1.5, 12):
        cur = empirical_moduli(X, s, X[3], s[3], r)
        assert cur[0] >= prev[0] and cur[1] >= prev[1]
        prev = cur


def test_constant_field_full_coverage():
    rng = np.random.default_rng(2)
    bx = rng.random((64, 2))
    rep = check_bounds(rng.random((100, 2)), None, bx, np.full(64, 2.0),
                       lambda Z, _y: np.full(len(Z), 2.0), 6)
    assert rep.coverage_fraction == 1.0 and rep.passed


def test_coverage_shift_invariant():
    rng = np.random.default_rng(3)
    bx = rng.random((64, 2)) * [0.5, 1.0]  # buffer covers only the left half
    X = rng.random((200, 2))

    def field(Z, _y):
        return 10.0 * Z[:, 0]

    base = check_bounds(X, None, bx, field(bx, None), field, 5)
    shifted = check_bounds(X, None, bx, field(bx, None) + 10.0, lambda Z, y: field(Z, y) + 10.0, 5)
    assert 0.0 < base.coverage_fraction < 1.0
    assert base.coverage_fraction == shifted.coverage_fraction


def test_check_bounds_with_model_scores():
    rng = np.random.default_rng(4)
    st = nn.init_model(nn.ModelConfig((2, 4, 2), "tanh", seed=1))
    bx = rng.random((32, 2))
    by = rng.integers(0, 2, 32)
    X = rng.random((50, 2))
    y = rng.integers(0, 2, 50)
    fn = model_score_fn(st)
    rep = check_bounds(X, y, bx, fn(bx, by), fn, 4)
    assert rep.samples_checked == 50 and rep.buffer_size == 32 and rep.dim == 2
    assert 0.0 <= rep.coverage_fraction <= 1.0


def test_check_bounds_requires_unit_cube():
    with pytest.raises(ValueError):
        check_bounds(np.full((3, 2), 2.0), None, np.zeros((8, 2)), np.ones(8),
                     lambda Z, _y: np.ones(len(Z)), 3)


def test_report_text_round_trip():
    rep = BoundReport(0.1767766952966369, 0.8325546111576977, 0.97, 12, 0.05, 1000, 8, 256, 2, True)
    text = rep.to_text()
    assert "passed = true" in text
    assert BoundReport.from_text(text) == rep


def test_radius_check_clustered_and_domain_bound():
    bx = np.full((16, 2), 0.5)
    r, bound, within = radius_check(np.array([0.5, 0.5]), bx, 4)
    assert r == 0.0 and within
    rng = np.random.default_rng(5)
    bx = rng.random((16, 3))
    r, bound, _ = radius_check(bx[0], bx, 15)
    assert r <= math.sqrt(3)
    assert bound == pytest.approx((15 / 16) ** (1 / 3))
