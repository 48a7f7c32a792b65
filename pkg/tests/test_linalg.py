"""Dense ops, activations, and the seeded RNG."""

import math

import numpy as np
import pytest

from mmgru.errors import ShapeError
from mmgru.linalg import (
    Rng,
    hadamard,
    init_uniform,
    log_softmax,
    matmul,
    sigmoid,
    softmax,
    tanh,
)

# Independent reimplementation of the documented generator with plain
# Python ints, used as the known-answer oracle for Rng.
_MASK = (1 << 64) - 1


def _splitmix64_reference(seed, n):
    state = seed & _MASK
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & _MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        out.append(z ^ (z >> 31))
    return out


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(np.eye(2), a), a)

    def test_hand_product(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0], [1.0]]))
        assert np.array_equal(out, np.array([[2.0], [4.0]]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_associativity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.normal(size=(3, 4))
            b = rng.normal(size=(4, 5))
            c = rng.normal(size=(5, 2))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            rel = np.abs(left - right) / np.maximum(1e-12, np.abs(right))
            assert rel.max() < 1e-9

    def test_non_matrix_input(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros(3), np.zeros((3, 2)))


class TestHadamard:
    def test_zero(self):
        assert np.array_equal(hadamard(np.array([1.0, 2.0, 3.0]), np.zeros(3)), np.zeros(3))

    def test_hand_product(self):
        assert np.array_equal(hadamard(np.array([1.0, 2.0]), np.array([3.0, 4.0])), np.array([3.0, 8.0]))

    def test_ones_identity(self):
        v = np.array([0.5, -2.0, 7.0])
        assert np.array_equal(hadamard(np.ones(3), v), v)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            hadamard(np.zeros(2), np.zeros(3))


class TestActivations:
    def test_sigmoid_zero(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5

    def test_sigmoid_saturation(self):
        hi = sigmoid(np.array([50.0]))[0]
        assert abs(hi - 1.0) < 1e-15
        assert hi < 1.0

    def test_sigmoid_symmetry(self):
        rng = np.random.default_rng(1)
        x = rng.normal(scale=4.0, size=200)
        assert np.abs(sigmoid(-x) - (1.0 - sigmoid(x))).max() < 1e-12

    def test_sigmoid_open_range_extremes(self):
        out = sigmoid(np.array([-1000.0, -40.0, 0.0, 40.0, 1000.0]))
        assert np.all(out > 0.0)
        assert np.all(out < 1.0)

    def test_tanh_zero(self):
        assert tanh(np.array([0.0]))[0] == 0.0

    def test_tanh_sigmoid_identity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(scale=3.0, size=200)
        assert np.abs(tanh(x) - (2.0 * sigmoid(2.0 * x) - 1.0)).max() < 1e-12

    def test_tanh_odd(self):
        rng = np.random.default_rng(3)
        x = rng.normal(scale=3.0, size=100)
        assert np.abs(tanh(-x) + tanh(x)).max() < 1e-15

    def test_tanh_open_range_extremes(self):
        out = tanh(np.array([-1000.0, 1000.0]))
        assert np.all(out > -1.0)
        assert np.all(out < 1.0)


class TestSoftmax:
    def test_uniform(self):
        assert np.abs(softmax(np.zeros(3)) - 1.0 / 3.0).max() < 1e-15

    def test_large_inputs_no_overflow(self):
        out = softmax(np.array([1000.0, 1000.0]))
        assert np.abs(out - 0.5).max() < 1e-12

    def test_shift_invariance(self):
        rng = np.random.default_rng(4)
        y = rng.normal(size=10)
        assert np.abs(softmax(y + 123.0) - softmax(y)).max() < 1e-12

    def test_sums_to_one(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            out = softmax(rng.normal(scale=10.0, size=7))
            assert abs(out.sum() - 1.0) < 1e-9
            assert np.all(out >= 0.0)

    def test_log_softmax_consistency(self):
        rng = np.random.default_rng(6)
        y = rng.normal(scale=5.0, size=9)
        assert np.abs(np.exp(log_softmax(y)) - softmax(y)).max() < 1e-12

    def test_empty_vector(self):
        with pytest.raises(ShapeError):
            softmax(np.zeros(0))


class TestRng:
    def test_known_answer_stream(self):
        rng = Rng(1234567)
        assert [rng.next_u64() for _ in range(5)] == _splitmix64_reference(1234567, 5)

    def test_same_seed_same_stream(self):
        a, b = Rng(42), Rng(42)
        assert [a.next_u64() for _ in range(100)] == [b.next_u64() for _ in range(100)]

    def test_block_matches_scalar_stream(self):
        a, b = Rng(7), Rng(7)
        block = a.u64_block(257)
        scalar = np.array([b.next_u64() for _ in range(257)], dtype=np.uint64)
        assert np.array_equal(block, scalar)
        # streams stay aligned afterwards
        assert a.next_u64() == b.next_u64()

    def test_float_range(self):
        rng = Rng(9)
        values = rng.float_block(10_000)
        assert values.min() >= 0.0
        assert values.max() < 1.0

    def test_next_index_bounds(self):
        rng = Rng(11)
        for n in (1, 2, 7, 1000):
            for _ in range(50):
                assert 0 <= rng.next_index(n) < n
        with pytest.raises(ValueError):
            rng.next_index(0)

    def test_shuffle_is_permutation(self):
        rng = Rng(13)
        items = list(range(50))
        rng.shuffle(items)
        assert sorted(items) == list(range(50))
        assert items != list(range(50))

    def test_shuffle_deterministic(self):
        a = list(range(20))
        b = list(range(20))
        Rng(99).shuffle(a)
        Rng(99).shuffle(b)
        assert a == b


class TestInitUniform:
    def test_zero_scale_forbidden(self):
        with pytest.raises(ValueError):
            init_uniform(Rng(1), 2, 2, 0.0)

    def test_determinism(self):
        assert np.array_equal(init_uniform(Rng(42), 5, 7, 0.3), init_uniform(Rng(42), 5, 7, 0.3))

    def test_range(self):
        m = init_uniform(Rng(8), 40, 25, 0.2)
        assert m.min() >= -0.2
        assert m.max() <= 0.2

    def test_empirical_mean(self):
        # mean of n uniform[-s, s] draws has std s/sqrt(3n)
        scale = 1.0
        n = 1_000_000
        m = init_uniform(Rng(123), 1000, 1000, scale)
        sigma = scale / math.sqrt(3 * n)
        assert abs(m.mean()) < 3 * sigma

    def test_bad_dimensions(self):
        with pytest.raises(ShapeError):
            init_uniform(Rng(1), 0, 3, 0.1)
