import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctrlopt.domain import DomainError, OracleRegistry, PropertySpec, make_task
from ctrlopt.policy import DEFAULT_SYMBOLS
from ctrlopt.shaping import (
    SteepnessConfig,
    improvement_score,
    improvement_score_grad,
    shape_matrix,
    shape_rewards,
    sigmoid,
    stability_score,
    stability_score_grad,
    steepness,
    unaligned_matrix,
)


def ref_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


@pytest.mark.parametrize("delta, alpha", [(0.1, 50.0), (1.0, 5.0), (0.2, 25.0)])
def test_steepness_from_margin(delta, alpha):
    # margins 0.1 and 1.0 are the QED and PlogP margins of the benchmark
    assert steepness(delta) == pytest.approx(alpha, rel=1e-12)


def test_steepness_errors():
    with pytest.raises(DomainError):
        steepness(0.0)
    with pytest.raises(DomainError):
        SteepnessConfig(0.0)


def test_sigmoid_stable_at_extremes():
    assert sigmoid(-800.0) == 0.0
    assert sigmoid(800.0) == 1.0
    assert np.all(np.isfinite(sigmoid(np.array([-1e308, 1e308]))))


@given(st.floats(-30, 30))
def test_sigmoid_matches_reference(x):
    assert sigmoid(x) == pytest.approx(ref_sigmoid(x), rel=1e-14, abs=1e-300)


def test_improvement_examples():
    assert improvement_score(0.3, 0.3, 50.0) == 0.5
    assert improvement_score(1.1, 1.0, 50.0) == pytest.approx(0.993307, abs=1e-6)
    assert improvement_score(1.1, 1.0, 50.0, -1) == pytest.approx(0.006693, abs=1e-6)


def test_stability_examples():
    alpha, delta = 50.0, 0.1
    lo, hi = 0.4, 0.6
    # alpha * half-width = 5 on both sides, so the centre is sigmoid(5)**2
    assert stability_score(0.5, lo, hi, alpha) == pytest.approx(ref_sigmoid(5.0) ** 2, rel=1e-12)
    assert stability_score(0.5, lo, hi, alpha) == pytest.approx(0.986659, abs=1e-6)
    assert stability_score(hi, lo, hi, alpha) == pytest.approx(0.4999773, abs=1e-7)
    assert stability_score(hi + 3 * delta, lo, hi, alpha) == pytest.approx(3.06e-7, rel=1e-2)


def test_stability_empty_band():
    with pytest.raises(DomainError):
        stability_score(0.5, 0.6, 0.6, 1.0)


@given(st.floats(-10, 10), st.floats(0.01, 100))
def test_improvement_midpoint_exact(t, alpha):
    assert improvement_score(t, t, alpha) == 0.5
    assert improvement_score(t, t, alpha, -1) == 0.5


@given(st.floats(0.001, 10), st.floats(0.001, 10), st.floats(-5, 5), st.floats(-5, 5))
def test_scale_equalization(da, db, ta, tb):
    # moving exactly one margin past the target gives the same score on any scale
    sa = improvement_score(ta + da, ta, steepness(da))
    sb = improvement_score(tb + db, tb, steepness(db))
    assert sa == pytest.approx(sb, abs=1e-12)
    assert sa == pytest.approx(ref_sigmoid(5.0), abs=1e-12)


@given(st.floats(-3, 3), st.floats(0.01, 2), st.floats(0.1, 50), st.floats(0, 3))
def test_stability_symmetric_about_center(c, half, alpha, off):
    lo, hi = c - half, c + half
    a = stability_score(c + off, lo, hi, alpha)
    b = stability_score(c - off, lo, hi, alpha)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-300)
    assert stability_score(c, lo, hi, alpha) >= a


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.5, 20), st.sampled_from([1, -1]))
def test_improvement_grad_fd(v, t, alpha, d):
    h = 1e-6
    fd = (improvement_score(v + h, t, alpha, d) - improvement_score(v - h, t, alpha, d)) / (2 * h)
    assert improvement_score_grad(v, t, alpha, d) == pytest.approx(fd, rel=1e-5, abs=1e-8)


@given(st.floats(-2, 2), st.floats(0.5, 20))
def test_stability_grad_fd(v, alpha):
    h = 1e-6
    fd = (stability_score(v + h, -0.3, 0.4, alpha) - stability_score(v - h, -0.3, 0.4, alpha)) / (2 * h)
    assert stability_score_grad(v, -0.3, 0.4, alpha) == pytest.approx(fd, rel=1e-5, abs=1e-8)


REG = OracleRegistry(DEFAULT_SYMBOLS, 10)


@pytest.fixture
def task():
    specs = [
        PropertySpec("a", 1, 0.1, 0.9, "frac_A"),
        PropertySpec("b", -1, 0.2, 0.1, "frac_B"),
        PropertySpec("c", 1, 0.1, 0.1, "frac_C"),
    ]
    return make_task("ABBBCDDDDD", specs, REG)  # a, b improve; c stabilize


def test_shape_rewards_at_targets(task):
    vals = [task.targets["a"], task.targets["b"], 0.1]
    s = shape_rewards(vals, task)
    assert s.per_property["a"] == 0.5 and s.per_property["b"] == 0.5
    assert s.per_property["c"] == pytest.approx(ref_sigmoid(5.0) ** 2, rel=1e-12)


def test_source_shapes_to_known_values(task):
    s = shape_rewards(task.source_values, task).vector()
    assert s[0] == pytest.approx(ref_sigmoid(-5), rel=1e-12)
    assert s[1] == pytest.approx(ref_sigmoid(-5), rel=1e-12)
    assert s[2] == pytest.approx(ref_sigmoid(5) ** 2, rel=1e-12)


def test_shape_matrix_matches_rows(task):
    rng = np.random.default_rng(3)
    vals = rng.random((6, 3))
    m = shape_matrix(vals, task)
    for row, v in zip(m, vals):
        np.testing.assert_allclose(row, shape_rewards(v, task).vector(), rtol=0, atol=1e-15)
    assert np.all((m >= 0) & (m <= 1))


@given(st.floats(-0.5, 1.5), st.floats(0.01, 1.0))
def test_scores_strictly_inside_unit_interval(v, delta):
    # strictness holds while |alpha * distance| stays below ~36 (float64 saturation)
    alpha = steepness(delta)
    t = 0.5
    if abs(alpha * (v - t)) < 30:
        assert 0.0 < improvement_score(v, t, alpha) < 1.0
    lo, hi = t - delta, t + delta
    if max(abs(alpha * (hi - v)), abs(alpha * (v - lo))) < 30:
        assert 0.0 < stability_score(v, lo, hi, alpha) < 1.0


def test_shape_rewards_length_mismatch(task):
    with pytest.raises(DomainError):
        shape_rewards([0.1], task)


def test_unaligned_matrix_native_scale(task):
    vals = np.array([[0.3, 0.2, 0.1], [0.0, 1.0, 0.0]])
    m = unaligned_matrix(vals, task, [(0, 1), (0, 1), (0, 1)])
    np.testing.assert_allclose(m, [[0.3, 0.8, 0.1], [0.0, 0.0, 0.0]])
