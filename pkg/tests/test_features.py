import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coseg.features import (COLOR_BINS, FLOW_BINS, SHAPE_BINS, FeatureError, RegionFeature, chi_squared,
                            chi_squared_matrix, co_saliency, color_histogram, feature_distance,
                            flow_histogram, saliency_score, shape_histogram)
from coseg.vidcore import Video

from conftest import rect_mask, synth_set, textured_frame


def chi2_loop(h, g):
    total = 0.0
    for a, b in zip(h, g):
        if a + b > 0:
            total += (a - b) ** 2 / (a + b)
    return total / 2


def test_chi_squared_examples():
    assert chi_squared([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert chi_squared([1, 0], [0, 1]) == pytest.approx(1.0, abs=1e-9)
    assert chi_squared([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.0666667, abs=1e-6)
    assert chi_squared([0.5, 0.5], [0.25, 0.75]) == pytest.approx(chi2_loop([0.5, 0.5], [0.25, 0.75]), abs=1e-12)


def test_chi_squared_length_mismatch():
    with pytest.raises(FeatureError):
        chi_squared([1.0], [0.5, 0.5])


def test_chi_squared_matrix_matches_scalar():
    rng = np.random.default_rng(3)
    a = rng.dirichlet(np.ones(7), 4)
    b = rng.dirichlet(np.ones(7), 5)
    m = chi_squared_matrix(a, b)
    for i in range(4):
        for j in range(5):
            assert m[i, j] == pytest.approx(chi2_loop(a[i], b[j]), abs=1e-10)


def test_uniform_colour_region():
    frame = np.zeros((20, 20, 3), np.uint8)
    frame[:] = (200, 60, 30)
    m = rect_mask((20, 20), 2, 8, 2, 8)
    h = color_histogram(frame, m)
    assert h.shape == (COLOR_BINS,)
    assert np.count_nonzero(h) == 6
    assert h.sum() == pytest.approx(1.0, abs=1e-9)
    other = rect_mask((20, 20), 12, 18, 10, 19)
    assert np.array_equal(color_histogram(frame, other), h)


def test_colour_histogram_sums_to_one():
    f = textured_frame(seed=5)
    h = color_histogram(f, rect_mask(f.shape[:2], 5, 30, 3, 40))
    assert h.sum() == pytest.approx(1.0, abs=1e-9)
    assert (h >= 0).all()


def test_empty_region_rejected():
    f = textured_frame()
    with pytest.raises(FeatureError):
        color_histogram(f, np.zeros(f.shape[:2], bool))


def test_constant_region_shape_uniform():
    frame = np.full((24, 24, 3), 90, np.uint8)
    h = shape_histogram(frame, rect_mask((24, 24), 3, 20, 3, 20))
    assert h.shape == (SHAPE_BINS,)
    assert np.allclose(h, 1.0 / 81)


def test_vertical_edge_horizontal_gradient():
    frame = np.zeros((30, 30, 3), np.uint8)
    frame[:, 15:] = 255
    h = shape_histogram(frame, rect_mask((30, 30), 2, 28, 2, 28))
    assert h.sum() == pytest.approx(1.0, abs=1e-9)
    # unsigned orientation bins 0 and 8 straddle the horizontal direction
    horiz = h.reshape(9, 9)[:, [0, 8]].sum()
    assert horiz >= 0.6


def test_flow_histogram_examples():
    m = rect_mask((10, 10), 2, 8, 2, 8)
    zero = flow_histogram(np.zeros((10, 10, 2)), m)
    assert zero.shape == (FLOW_BINS,)
    assert zero[:8].sum() == pytest.approx(1.0)
    f = np.zeros((10, 10, 2))
    f[..., 0] = 3.0
    uni = flow_histogram(f, m)
    assert np.count_nonzero(uni) == 1
    assert uni.sum() == pytest.approx(1.0, abs=1e-9)


def test_feature_distance_examples():
    rng = np.random.default_rng(0)
    c, s = rng.dirichlet(np.ones(COLOR_BINS)), rng.dirichlet(np.ones(SHAPE_BINS))
    f = RegionFeature(c, s)
    assert feature_distance(f, f, 2.0) == 0.0
    a, b = _with_chi(0.3, s), RegionFeature(np.array([1.0, 0.0]), s)
    assert chi_squared(a.color, b.color) == pytest.approx(0.3, abs=1e-15)
    assert feature_distance(a, b, 2.0) == pytest.approx(0.2, abs=1e-12)


def _with_chi(target, shape):
    # [x, 1 - x] against [1, 0] gives chi2 = (1 - x) / (1 + x)
    x = (1.0 - target) / (1.0 + target)
    return RegionFeature(np.array([x, 1.0 - x]), shape)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_feature_distance_bounded(seed, w):
    rng = np.random.default_rng(seed)
    f1 = RegionFeature(rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(5)))
    f2 = RegionFeature(rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(5)))
    d = feature_distance(f1, f2, w)
    assert 0.0 <= d <= max(chi_squared(f1.color, f2.color), chi_squared(f1.shape, f2.shape)) + 1e-12
    assert d == pytest.approx(feature_distance(f2, f1, w), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 12, elements=st.floats(0, 1)), arrays(np.float64, 12, elements=st.floats(0, 1)))
def test_chi_squared_properties(a, b):
    if a.sum() == 0 or b.sum() == 0:
        return
    a, b = a / a.sum(), b / b.sum()
    d = chi_squared(a, b)
    assert d >= 0
    assert d == pytest.approx(chi_squared(b, a), abs=1e-15)
    assert d <= 1.0 + 1e-9
    assert chi_squared(a, a) == 0.0
    assert d == pytest.approx(chi2_loop(a, b), abs=1e-6)


def test_co_saliency_square_on_grey():
    videos, gts = synth_set([[(1, (24, 16), (1, 0))], [(1, (20, 14), (-1, 1))]], frames=3)
    maps = co_saliency(videos, 8)
    for s, gt in zip(maps, gts):
        assert s.min() >= 0.0 and s.max() <= 1.0
        inside = gt == 1
        assert s[inside].mean() >= 2 * s[~inside].mean()


def test_co_saliency_constant_frames():
    v = Video("c", np.full((2, 16, 16, 3), 77, np.uint8))
    (s,) = co_saliency([v], 8)
    assert not s.any()


def test_saliency_score_examples():
    s = np.zeros((1, 8, 8))
    s[0, :, :4] = 1.0
    assert saliency_score(s, 0, rect_mask((8, 8), 0, 8, 0, 4)) == 1.0
    assert saliency_score(s, 0, rect_mask((8, 8), 0, 8, 4, 8)) == 0.0
    assert saliency_score(s, 0, rect_mask((8, 8), 0, 8, 2, 6)) == 0.5

