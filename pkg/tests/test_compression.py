import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.compression import (DimensionMismatchError, ErrorState,
                                SparseUpdate, compress_with_feedback,
                                compression_error, densify, deserialize,
                                serialize, top_k_compress, top_k_count,
                                wire_bits)


def test_hand_worked_example():
    g = np.array([3.0, -1.0, 2.0, 0.5])
    update, residual = top_k_compress(g, 0.5)
    assert update.indices.tolist() == [0, 2]
    assert update.values.tolist() == [3.0, 2.0]
    np.testing.assert_array_equal(residual, [0.0, -1.0, 0.0, 0.5])


def test_theta_one_is_identity():
    g = np.random.default_rng(0).normal(size=64)
    update, residual = top_k_compress(g, 1.0)
    np.testing.assert_array_equal(densify(update), g)
    assert np.all(residual == 0.0)


def test_theta_out_of_range():
    g = np.ones(4)
    for theta in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            top_k_compress(g, theta)


def test_magnitude_tie_breaks_to_lower_index():
    g = np.array([1.0, -1.0, 1.0, 1.0])
    update, _ = top_k_compress(g, 0.5)
    assert update.indices.tolist() == [0, 1]


def test_contraction_property_random_vectors():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        d = int(rng.integers(2, 257))
        g = rng.normal(size=d)
        theta = float(rng.choice([0.01, 0.05, 0.1, 0.25, 0.5, 1.0]))
        update, residual = top_k_compress(g, theta)
        k = top_k_count(theta, d)
        lhs = float(residual @ residual)
        rhs = (1 - k / d) * float(g @ g) * (1 + 1e-12)
        assert lhs <= rhs


def test_top_k_is_optimal_k_sparse_approximation():
    rng = np.random.default_rng(2)
    for _ in range(50):
        d = int(rng.integers(4, 13))
        k = int(rng.integers(1, 4))
        g = rng.normal(size=d)
        update, _ = top_k_compress(g, k / d)
        assert len(update.indices) == k
        err = float(np.linalg.norm(g - densify(update)))
        # exhaustive oracle over all k-index subsets
        best = min(
            np.linalg.norm(g - _mask(g, subset))
            for subset in itertools.combinations(range(d), k))
        assert err <= best + 1e-12


def _mask(g, subset):
    out = np.zeros_like(g)
    out[list(subset)] = g[list(subset)]
    return out


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=64),
       st.floats(0.01, 1.0))
def test_contraction_property_hypothesis(values, theta):
    g = np.array(values)
    update, residual = top_k_compress(g, theta)
    k = top_k_count(theta, g.size)
    assert float(residual @ residual) <= (1 - k / g.size) * float(g @ g) + 1e-9


def test_feedback_lossless_path():
    state = ErrorState(dim=8)
    g = np.random.default_rng(3).normal(size=8)
    u = compress_with_feedback(g, 1.0, state, client=0)
    np.testing.assert_array_equal(densify(u), g)
    assert np.all(state.residuals[0] == 0.0)


def test_feedback_two_round_telescoping():
    state = ErrorState(dim=6)
    g = np.array([4.0, -3.0, 2.0, -1.0, 0.5, 0.25])
    sent = np.zeros(6)
    for _ in range(2):
        u = compress_with_feedback(g, 0.5, state, client=1)
        sent += densify(u)
    total = sent + state.residuals[1]
    np.testing.assert_allclose(total, 2 * g, rtol=1e-9)


def test_feedback_residual_stays_bounded():
    # direct-accumulation oracle over 16 rounds on a constant gradient
    d, theta, rounds = 32, 0.25, 16
    k = top_k_count(theta, d)
    g = np.random.default_rng(4).normal(size=d)
    state = ErrorState(dim=d)
    sent_total = np.zeros(d)
    for _ in range(rounds):
        u = compress_with_feedback(g, theta, state, client=0)
        sent_total += densify(u)
    residual = state.residuals[0]
    np.testing.assert_allclose(sent_total + residual, rounds * g, rtol=1e-9)
    assert np.linalg.norm(residual) <= np.linalg.norm(g) * math.sqrt(d / k)


def test_feedback_conservation_many_rounds_random_gradients():
    rng = np.random.default_rng(5)
    state = ErrorState(dim=50)
    raw_sum = np.zeros(50)
    sent_sum = np.zeros(50)
    for _ in range(50):
        g = rng.normal(size=50)
        raw_sum += g
        sent_sum += densify(compress_with_feedback(g, 0.1, state, client=2))
    np.testing.assert_allclose(sent_sum + state.residuals[2], raw_sum,
                               rtol=1e-6, atol=1e-9)


def test_densify_degenerate_zero_vector():
    update, _ = top_k_compress(np.zeros(5), 0.1)
    assert len(update.indices) == 1
    assert update.values.tolist() == [0.0]
    np.testing.assert_array_equal(densify(update), np.zeros(5))


def test_compression_error_examples():
    g = np.array([3.0, -1.0, 2.0, 0.5])
    update, _ = top_k_compress(g, 0.5)
    assert compression_error(update, g) == pytest.approx(math.sqrt(1.25))
    full, _ = top_k_compress(g, 1.0)
    assert compression_error(full, g) == 0.0
    with pytest.raises(DimensionMismatchError):
        compression_error(update, np.zeros(9))


def test_compression_error_bounded_by_input_norm():
    rng = np.random.default_rng(6)
    for _ in range(100):
        g = rng.normal(size=40)
        update, _ = top_k_compress(g, float(rng.uniform(0.05, 1.0)))
        assert compression_error(update, g) <= np.linalg.norm(g) + 1e-12


def test_wire_bits_arithmetic():
    g = np.random.default_rng(7).normal(size=1000)
    update, _ = top_k_compress(g, 0.1)
    paper, wire = wire_bits(update)
    assert paper == 3200
    assert wire == 100 * 64 + 128 == 6528
    full, _ = top_k_compress(g, 1.0)
    assert wire_bits(full)[0] == 32000


def test_serialize_byte_roundtrip():
    g = np.random.default_rng(8).normal(size=200)
    update, _ = top_k_compress(g, 0.25)
    update.round = 17
    raw = serialize(update)
    assert len(raw) == 16 + len(update.indices) * 8
    back = deserialize(raw)
    assert serialize(back) == raw
    assert back.dim == 200
    assert back.round == 17
    np.testing.assert_array_equal(back.indices, update.indices)


def test_densify_after_wire_roundtrip_matches_float32_cast():
    # wire values are 32-bit floats; the round-trip is exactly a float32 cast
    g = np.random.default_rng(9).normal(size=64)
    update, _ = top_k_compress(g, 0.5)
    back = deserialize(serialize(update))
    expected = densify(update).astype(np.float32).astype(np.float64)
    np.testing.assert_array_equal(densify(back), expected)


def test_deserialize_rejects_corruption():
    g = np.arange(10.0)
    update, _ = top_k_compress(g, 0.5)
    raw = serialize(update)
    with pytest.raises(ValueError):
        deserialize(raw[:-2])
    with pytest.raises(ValueError):
        deserialize(b"XXXX" + raw[4:])
