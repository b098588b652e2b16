import math

import numpy as np
import pytest

from flatopt import Rng, as_param_vector, axpy, dot, l2_norm


def test_axpy_basic():
    x = np.array([1.0, 0.0])
    y = np.array([0.0, 1.0])
    assert np.array_equal(axpy(2.0, x, y), np.array([2.0, 1.0]))


def test_axpy_zero_scale_is_identity():
    assert np.array_equal(
        axpy(0.0, np.array([5.0, 5.0]), np.array([3.0, 4.0])), np.array([3.0, 4.0])
    )


def test_axpy_self_cancellation():
    v = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(axpy(-1.0, v, v), np.zeros(3))


def test_axpy_dimension_mismatch():
    with pytest.raises(ValueError):
        axpy(1.0, np.zeros(2), np.zeros(3))


def test_l2_norm_values():
    assert l2_norm(np.array([3.0, 4.0])) == 5.0
    assert l2_norm(np.zeros(3)) == 0.0
    assert l2_norm(np.ones(4)) == 2.0


def test_dot_values():
    assert dot(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert dot(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0


def test_dot_dimension_mismatch():
    with pytest.raises(ValueError):
        dot(np.zeros(2), np.zeros(4))


def test_dot_matches_norm_squared_within_4_ulps():
    rng = Rng(2024)
    for _ in range(50):
        x = rng.normals(64) * 3.0
        d = dot(x, x)
        n2 = l2_norm(x) ** 2
        assert abs(d - n2) <= 4 * math.ulp(max(d, n2))


def test_as_param_vector_rejects_non_finite():
    with pytest.raises(ValueError):
        as_param_vector([1.0, float("nan")])
    with pytest.raises(ValueError):
        as_param_vector([float("inf"), 0.0])


def test_reductions_bit_identical_across_calls():
    x = Rng(9).normals(501)
    y = Rng(10).normals(501)
    assert dot(x, y) == dot(x.copy(), y.copy())
    assert l2_norm(x) == l2_norm(x.copy())
