import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from weakprior import DimensionError
from weakprior.tensor_core import channel_mean_pool, minmax_normalize, resize_bilinear

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_mean_pool_two_values():
    assert channel_mean_pool(np.array([[[2.0]], [[4.0]]])).tolist() == [[3.0]]


def test_mean_pool_single_channel_is_identity(rng):
    t = rng.normal(size=(1, 3, 5))
    np.testing.assert_array_equal(channel_mean_pool(t), t[0])


def test_mean_pool_matches_loop(rng):
    t = rng.normal(size=(3, 2, 2))
    expected = np.zeros((2, 2))
    for y in range(2):
        for x in range(2):
            total = 0.0
            for c in range(3):
                total += t[c, y, x]
            expected[y, x] = total / 3
    np.testing.assert_allclose(channel_mean_pool(t), expected, rtol=1e-15)


def test_mean_pool_rejects_zero_channels():
    with pytest.raises(DimensionError):
        channel_mean_pool(np.zeros((0, 2, 2)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3, 3), elements=finite), st.permutations(range(4)))
def test_mean_pool_permutation_invariant(t, perm):
    np.testing.assert_allclose(channel_mean_pool(t[list(perm)]), channel_mean_pool(t), rtol=1e-12, atol=1e-6)


def test_minmax_examples():
    np.testing.assert_array_equal(minmax_normalize([[0, 5], [10, 5]]), [[0, 0.5], [1, 0.5]])
    np.testing.assert_array_equal(minmax_normalize([[7, 7]]), [[0, 0]])


def test_minmax_random_extrema(rng):
    out = minmax_normalize(rng.normal(size=(6, 7)))
    assert out.min() == 0.0 and out.max() == 1.0


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 4), elements=finite))
def test_minmax_range_and_idempotence(m):
    out = minmax_normalize(m)
    assert out.min() >= 0.0 and out.max() <= 1.0
    if m.max() > m.min():
        np.testing.assert_allclose(minmax_normalize(out), out, atol=1e-12)


def test_resize_constant():
    out = resize_bilinear(np.full((4, 4), 0.3), 8, 8)
    assert out.shape == (8, 8)
    np.testing.assert_allclose(out, 0.3, rtol=0, atol=0)


def test_resize_center_is_corner_mean():
    m = np.array([[1.0, 2.0], [3.0, 5.0]])
    out = resize_bilinear(m, 3, 3)
    assert out[1, 1] == pytest.approx((1 + 2 + 3 + 5) / 4, abs=1e-15)
    # corner alignment keeps the corners
    assert (out[0, 0], out[0, 2], out[2, 0], out[2, 2]) == (1.0, 2.0, 3.0, 5.0)


def test_resize_same_dims_bit_identical(rng):
    m = rng.normal(size=(5, 9))
    assert resize_bilinear(m, 5, 9).tobytes() == m.tobytes()


def test_resize_up_then_down_constant():
    m = np.full((3, 5), -2.25)
    back = resize_bilinear(resize_bilinear(m, 11, 17), 3, 5)
    np.testing.assert_array_equal(back, m)


def test_resize_rejects_zero_target():
    with pytest.raises(DimensionError):
        resize_bilinear(np.ones((2, 2)), 0, 3)


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite),
    st.integers(1, 12),
    st.integers(1, 12),
)
def test_resize_stays_within_input_range(m, h, w):
    out = resize_bilinear(m, h, w)
    assert out.shape == (h, w)
    assert out.min() >= m.min() and out.max() <= m.max()
