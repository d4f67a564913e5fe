import numpy as np
import pytest

from fedecho.errors import ConfigError, NumericalError
from fedecho.linalg import as_matrix, l2_norm, matmul
from fedecho.rng import stream


def _triple_loop_matmul(a, b):
    # deliberately naive oracle
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def test_identity_times_matrix():
    gen = stream(0, 0).generator()
    m = gen.standard_normal((3, 3))
    assert np.allclose(matmul(np.eye(3), m), m)


def test_hand_computed_product():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[0.0], [1.0]])
    assert np.array_equal(matmul(a, b), np.array([[2.0], [4.0]]))


def test_matches_triple_loop_oracle():
    gen = stream(1, 0).generator()
    a = gen.standard_normal((5, 7))
    b = gen.standard_normal((7, 2))
    assert np.max(np.abs(matmul(a, b) - _triple_loop_matmul(a, b))) < 1e-12


def test_associativity_within_tolerance():
    gen = stream(2, 0).generator()
    for _ in range(20):
        a = gen.standard_normal((4, 6))
        b = gen.standard_normal((6, 3))
        c = gen.standard_normal((3, 5))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        scale = max(1.0, np.max(np.abs(left)))
        assert np.max(np.abs(left - right)) / scale < 1e-9


def test_dimension_mismatch_rejected():
    with pytest.raises(ConfigError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_non_finite_input_rejected():
    bad = np.array([[1.0, np.nan], [0.0, 1.0]])
    with pytest.raises(NumericalError):
        matmul(bad, np.eye(2))


def test_as_matrix_requires_two_dims():
    with pytest.raises(ConfigError):
        as_matrix(np.zeros(3))


def test_l2_norm():
    assert l2_norm(np.array([3.0, 4.0])) == 5.0
