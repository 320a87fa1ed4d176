import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weakprior import DimensionError, MulticlassPrior
from weakprior.cam import (
    PROB_FLOOR,
    binarize_cam,
    combine_multiclass,
    compute_cam,
    fgbg_to_probmaps,
    restrict_to_labels,
)
from weakprior.tensor_core import minmax_normalize


def test_cam_one_hot_selects_unit(rng):
    f = rng.normal(size=(4, 5, 5))
    w = np.zeros((1, 4))
    w[0, 2] = 1.0
    np.testing.assert_array_equal(compute_cam(f, w)[0], minmax_normalize(f[2]))


def test_cam_zero_row_gives_zero_map(rng):
    assert not compute_cam(rng.normal(size=(3, 4, 4)), np.zeros((2, 3))).any()


def test_cam_hand_evaluation():
    f = np.array([[[1.0, 2.0], [3.0, 4.0]], [[0.5, 0.0], [2.0, 1.0]]])
    # 1*f0 - 1*f1 = [[0.5, 2], [1, 3]] -> min 0.5, max 3
    expected = np.array([[0.0, 1.5 / 2.5], [0.5 / 2.5, 1.0]])
    np.testing.assert_allclose(compute_cam(f, [[1.0, -1.0]])[0], expected, atol=1e-15)
    np.testing.assert_allclose(compute_cam(f, [[1.0, -1.0]], normalize=False)[0], [[0.5, 2], [1, 3]])


def test_cam_channel_mismatch():
    with pytest.raises(DimensionError):
        compute_cam(np.zeros((3, 2, 2)), np.zeros((2, 4)))


def test_binarize_examples():
    assert binarize_cam([[1.0, 0.3, 0.1]], 0.2).tolist() == [[1, 1, 0]]
    assert not binarize_cam(np.zeros((3, 3))).any()
    assert binarize_cam(np.full((2, 2), 0.7)).all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_binarize_scale_invariant(seed, lam):
    m = np.random.default_rng(seed).random((6, 6))
    np.testing.assert_array_equal(binarize_cam(lam * m), binarize_cam(m))


def _combine_oracle(pf, cams, alpha, rho=0.2):
    """Scalar, pixel-by-pixel evaluation of the combination rules."""
    C, H, W = cams.shape
    peaks = [max(cams[c].ravel()) for c in range(C)]
    out = np.zeros((C + 1, H, W))
    for y in range(H):
        for x in range(W):
            raw = []
            m_sum = 0.0
            for c in range(C):
                b = 1.0 if peaks[c] > 0 and cams[c, y, x] > rho * peaks[c] else 0.0
                q = pf[y, x] * b
                raw.append(alpha * q + (1 - alpha) * cams[c, y, x])
                m_sum += cams[c, y, x]
            m0 = min(1.0, max(0.0, 1.0 - m_sum / C))
            raw.insert(0, alpha * (1 - pf[y, x]) + (1 - alpha) * m0)
            raw = [max(v, PROB_FLOOR) for v in raw]
            total = sum(raw)
            for k, v in enumerate(raw):
                out[k, y, x] = v / total
    return out


def test_combine_matches_scalar_oracle():
    pf = np.array([[0.9, 0.2]])
    cams = np.array([[[1.0, 0.1]], [[0.3, 0.8]]])
    got = combine_multiclass(pf, cams, 0.5)
    np.testing.assert_allclose(got, _combine_oracle(pf, cams, 0.5), atol=1e-15)
    # first pixel by hand: B = (1, 1); raw1 = .5*.9 + .5*1 = .95, raw2 = .5*.9 + .5*.3 = .6
    # M0 = 1 - .65 = .35; raw0 = .5*.1 + .5*.35 = .225
    np.testing.assert_allclose(got[:, 0, 0], np.array([0.225, 0.95, 0.6]) / 1.775, atol=1e-15)


def test_combine_random_against_oracle(rng):
    for _ in range(20):
        C = int(rng.integers(1, 5))
        pf = rng.random((3, 4))
        cams = rng.random((C, 3, 4))
        alpha = float(rng.random())
        np.testing.assert_allclose(combine_multiclass(pf, cams, alpha), _combine_oracle(pf, cams, alpha), atol=1e-14)


def test_combine_alpha_one_single_class(rng):
    pf = rng.random((4, 4)) * 0.98 + 0.01
    cams = np.ones((1, 4, 4))
    p = combine_multiclass(pf, cams, 1.0)
    np.testing.assert_allclose(p[1], pf, atol=1e-12)
    np.testing.assert_allclose(p[0], 1 - pf, atol=1e-12)


def test_combine_alpha_zero(rng):
    cams = rng.random((3, 4, 4)) * 0.5 + 0.1
    p = combine_multiclass(rng.random((4, 4)), cams, 0.0)
    raw = np.concatenate([np.clip(1 - cams.mean(0), 0, 1)[None], cams])
    np.testing.assert_allclose(p, raw / raw.sum(0), atol=1e-12)


def test_combine_errors(rng):
    with pytest.raises(DimensionError):
        combine_multiclass(rng.random((3, 3)), rng.random((2, 4, 4)))
    with pytest.raises(ValueError):
        combine_multiclass(rng.random((3, 3)), rng.random((2, 3, 3)), alpha=1.5)


def test_combine_monotone_in_pf(rng):
    # raw_c = alpha * pf * B_c + (1 - alpha) * M_c grows with pf where B_c = 1;
    # the probability ratio against background must therefore grow too
    cams = np.ones((1, 1, 2))
    lo = combine_multiclass(np.array([[0.2, 0.5]]), cams, 0.5)
    hi = combine_multiclass(np.array([[0.6, 0.5]]), cams, 0.5)
    assert hi[1, 0, 0] / hi[0, 0, 0] >= lo[1, 0, 0] / lo[0, 0, 0]


def test_fgbg_adapter(rng):
    p = fgbg_to_probmaps(np.array([[0.7, 0.0]]))
    np.testing.assert_allclose(p[:, 0, 0], [0.3, 0.7])
    np.testing.assert_array_equal(p[:, 0, 1], [1.0, 0.0])
    np.testing.assert_allclose(fgbg_to_probmaps(rng.random((5, 5))).sum(0), 1.0, atol=1e-15)


def test_restrict_to_labels(rng):
    p = combine_multiclass(rng.random((3, 3)), rng.random((3, 3, 3)))
    r = restrict_to_labels(p, {0, 2})
    assert not r[[1, 3]].any()
    np.testing.assert_allclose(r.sum(0), 1.0, atol=1e-12)
    np.testing.assert_allclose(r[2] / r[0], p[2] / p[0], rtol=1e-9)


def test_multiclass_prior_resizes_cams(rng):
    pf = rng.random((8, 8))
    est = MulticlassPrior(alpha=0.5)
    (p,) = est.fit_transform([(pf, rng.random((4, 4, 4)), rng.normal(size=(2, 4)))])
    assert p.shape == (3, 8, 8)
    assert math.isclose(float(p.sum(0).mean()), 1.0)
