import math

import numpy as np
import pytest

from spikezero.core import LearningRateSchedule, RngStream, as_vector, exp_map, hadamard


def test_hadamard_componentwise():
    np.testing.assert_array_equal(hadamard([1, 2, 3], [4, 5, 6]), [4.0, 10.0, 18.0])


def test_hadamard_identity_and_annihilator():
    v = np.array([0.5, -2.0, 7.0])
    np.testing.assert_array_equal(hadamard(v, np.ones(3)), v)
    np.testing.assert_array_equal(hadamard(v, np.zeros(3)), np.zeros(3))


def test_hadamard_commutes_exactly():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.standard_normal(8)
        b = rng.standard_normal(8)
        # IEEE multiplication is commutative, so the difference is exactly zero
        assert np.max(np.abs(hadamard(a, b) - hadamard(b, a))) == 0.0


def test_hadamard_associates_up_to_rounding():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b, c = rng.standard_normal((3, 8))
        left = hadamard(hadamard(a, b), c)
        right = hadamard(a, hadamard(b, c))
        np.testing.assert_allclose(left, right, rtol=1e-14)


def test_hadamard_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        hadamard([1.0, 2.0], [1.0, 2.0, 3.0])


def test_as_vector_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        as_vector([1.0, np.nan])
    with pytest.raises(ValueError, match="one-dimensional"):
        as_vector([[1.0, 2.0]])


def test_exp_map_values():
    np.testing.assert_array_equal(exp_map([0.0, 0.0], 1), [1.0, 1.0])
    np.testing.assert_allclose(exp_map([math.log(2.0)], -1), [0.5], rtol=1e-15)


def test_exp_map_reciprocal_pair():
    rng = np.random.default_rng(1)
    v = rng.uniform(-3, 3, size=20)
    np.testing.assert_allclose(hadamard(exp_map(v, 1), exp_map(v, -1)), np.ones(20),
                               rtol=1e-14)


def test_exp_map_positive():
    rng = np.random.default_rng(2)
    assert np.all(exp_map(rng.uniform(-50, 50, size=100), 1) > 0)


def test_exp_map_overflow_names_index():
    with pytest.raises(OverflowError, match="index 1"):
        exp_map([0.0, 800.0], 1)
    with pytest.raises(OverflowError, match="index 0"):
        exp_map([-800.0], -1)


def test_exp_map_bad_sign():
    with pytest.raises(ValueError):
        exp_map([1.0], 2)


@pytest.mark.parametrize("k,expected", [(1, 0.1), (7, 0.1), (1000, 0.1)])
def test_constant_schedule(k, expected):
    assert LearningRateSchedule.constant(0.1).rate(k) == expected


def test_power_schedule():
    s = LearningRateSchedule.power_decay(1.0, 1.0)
    assert s.rate(4) == 0.25
    assert LearningRateSchedule.power_decay(1.0, 0.0).rate(9) == 1.0


def test_schedule_nonincreasing():
    s = LearningRateSchedule.power_decay(2.0, 0.7)
    rates = [s.rate(k) for k in range(1, 200)]
    assert all(a >= b > 0 for a, b in zip(rates, rates[1:]))


def test_schedule_rejects_k_zero():
    with pytest.raises(ValueError):
        LearningRateSchedule.constant(1.0).rate(0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        LearningRateSchedule.constant(-0.1)
    with pytest.raises(ValueError):
        LearningRateSchedule("power", 1.0, -1.0)
    with pytest.raises(ValueError):
        LearningRateSchedule("cosine", 1.0)
    # the degenerate frozen schedule is allowed as a control
    assert LearningRateSchedule.constant(0.0).rate(3) == 0.0


def test_rng_stream_bitwise_reproducible():
    a = RngStream(123, (4, 5)).generator().uniform(size=1000)
    b = RngStream(123, (4, 5)).generator().uniform(size=1000)
    np.testing.assert_array_equal(a, b)


def test_rng_substreams_differ():
    base = RngStream(9)
    x = base.substream(0).generator().uniform(size=100)
    y = base.substream(1).generator().uniform(size=100)
    assert not np.array_equal(x, y)


def test_rng_stream_int_id_normalized():
    assert RngStream(1, 3).stream == (3,)
    assert RngStream(1).substream(2, 7).stream == (2, 7)


def test_rng_stream_validation():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(1, (-2,))
