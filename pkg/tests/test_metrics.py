"""
Test hand crops, Frechet and kernel distances and the paired t-test
"""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import stats

from mufen import tensor as T
from mufen.errors import DegenerateVarianceError, ImageTooSmallError, InvalidArgumentError, ShapeError
from mufen.metrics import (
    FeatureSet,
    GestureScores,
    crop_hand,
    crop_window,
    eval_stats,
    frechet_distance,
    kid,
    mmd2_unbiased,
    paired_ttest,
    paired_ttest_table,
    polynomial_kernel,
)


def kernel(x, y):
    return (x * y + 1.0) ** 3


def test_crop_window_centers_and_clamps():
    assert crop_window(320.0, 640) == 170
    assert crop_window(10.0, 640) == 0
    assert crop_window(635.0, 640) == 341
    assert crop_window(150.0, 299) == 0


def test_crop_hand():
    image = np.arange(480 * 640 * 3, dtype=np.int64).reshape(480, 640, 3)
    crop = crop_hand(image, (0.4, 0.4, 0.6, 0.6))
    assert crop.shape == (299, 299, 3)
    assert np.array_equal(crop, image[90:389, 170:469])
    with pytest.raises(ImageTooSmallError):
        crop_hand(np.zeros((200, 640, 3)), (0.4, 0.4, 0.6, 0.6))


def test_frechet_of_identical_sets_is_zero():
    rows = np.random.default_rng(0).normal(size=(50, 6))
    assert frechet_distance(rows, rows) == 0.0


def test_frechet_one_dimensional_closed_form():
    rng = np.random.default_rng(1)
    a, b = rng.normal(1.0, 2.0, size=300), rng.normal(-0.5, 0.7, size=200)
    expected = (a.mean() - b.mean()) ** 2 + (a.std(ddof=1) - b.std(ddof=1)) ** 2
    assert frechet_distance(a, b) == pytest.approx(expected, rel=1e-9)


def test_frechet_recovers_a_mean_shift():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((10_000, 8))
    b = rng.standard_normal((10_000, 8)) + 0.5
    assert frechet_distance(a, b) == pytest.approx(8 * 0.25, rel=0.05)


def test_frechet_symmetry_and_rotation_invariance():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(400, 5)) @ rng.normal(size=(5, 5))
    b = rng.normal(size=(300, 5)) + 0.3
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    base = frechet_distance(a, b)
    assert frechet_distance(b, a) == pytest.approx(base, rel=1e-6)
    assert frechet_distance(a @ q, b @ q) == pytest.approx(base, rel=1e-6)


def test_frechet_input_checks():
    with pytest.raises(ShapeError):
        frechet_distance(np.zeros((10, 3)), np.zeros((10, 4)))
    with pytest.raises(InvalidArgumentError):
        frechet_distance(np.zeros((1, 3)), np.ones((10, 3)))


def test_kid_of_identical_sets_is_zero():
    rows = np.random.default_rng(4).normal(size=(60, 4))
    mean, std = kid(rows, rows, subsets=10, subset_size=30)
    assert mean == pytest.approx(0.0, abs=1e-12)
    assert std == pytest.approx(0.0, abs=1e-12)


def test_kid_of_one_distribution_is_near_zero():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(200, 4)), rng.normal(size=(200, 4))
    mean, std = kid(a, b, subsets=50, subset_size=100)
    assert abs(mean) <= 3 * std


def test_mmd_two_sample_formula():
    x, y = np.array([[0.3], [-1.2]]), np.array([[0.8], [2.0]])
    (x1, x2), (y1, y2) = x[:, 0], y[:, 0]
    expected = kernel(x1, x2) + kernel(y1, y2) - kernel(x1, y2) - kernel(x2, y1)
    assert mmd2_unbiased(x, y) == pytest.approx(expected, rel=1e-12)
    mean, std = kid(x, y, subsets=5, subset_size=2)
    assert mean == pytest.approx(expected, rel=1e-12)
    assert std == pytest.approx(0.0, abs=1e-12)


def test_polynomial_kernel_scales_by_dimension():
    x = np.array([[1.0, 2.0]])
    assert polynomial_kernel(x, x)[0, 0] == pytest.approx((5.0 / 2 + 1.0) ** 3)


def test_kid_input_checks():
    a = np.zeros((10, 3))
    with pytest.raises(InvalidArgumentError):
        kid(a, np.zeros((20, 3)), subset_size=11)
    with pytest.raises(ShapeError):
        kid(a, np.zeros((10, 2)))
    with pytest.raises(InvalidArgumentError):
        kid(a, a, subsets=0)


def test_kid_full_subsets_ignore_row_order():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(40, 3)), rng.normal(size=(40, 3)) + 0.2
    perm = rng.permutation(40)
    first = kid(a, b, subsets=3, subset_size=40)
    second = kid(a[perm], b[perm], subsets=3, subset_size=40)
    assert first[0] == pytest.approx(second[0], rel=1e-10)


def test_kid_is_seeded():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=(50, 3)), rng.normal(size=(60, 3))
    assert kid(a, b, subsets=5, subset_size=20, seed=3) == kid(a, b, subsets=5, subset_size=20, seed=3)


def test_ttest_worked_example():
    result = paired_ttest([2.0, 3.0, 4.0, 5.0], [1.0, 1.0, 1.0, 1.0])
    assert result.t == pytest.approx(3.873, abs=1e-3)
    assert result.p == pytest.approx(0.0305, abs=1e-4)
    assert result.better_count == 0
    assert result.n == 4


def test_ttest_matches_scipy():
    rng = np.random.default_rng(8)
    a, b = rng.normal(10.0, 2.0, 18), rng.normal(11.0, 2.0, 18)
    result = paired_ttest(a, b)
    oracle = stats.ttest_rel(a, b)
    assert result.t == pytest.approx(oracle.statistic, abs=1e-10)
    assert result.p == pytest.approx(oracle.pvalue, abs=1e-10)


def test_ttest_counts_strict_wins():
    rng = np.random.default_rng(9)
    b = rng.uniform(20.0, 40.0, 18)
    a = b - 1.0 - rng.uniform(0.0, 1.0, 18)
    result = paired_ttest(GestureScores(a, b))
    assert result.better_count == 18
    assert result.t < 0
    tied = paired_ttest([1.0, 2.0, 3.0], [1.0, 3.0, 2.0])
    assert tied.better_count == 1


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(-100, 100, allow_nan=False), st.floats(-100, 100, allow_nan=False)),
        min_size=2, max_size=30,
    )
)
def test_ttest_antisymmetry(pairs):
    a = [p[0] for p in pairs]
    b = [p[1] for p in pairs]
    assume(np.std(np.subtract(a, b)) > 1e-6)
    forward, backward = paired_ttest(a, b), paired_ttest(b, a)
    assert forward.t == -backward.t
    assert forward.p == backward.p
    assert 0.0 <= forward.p <= 1.0


def test_ttest_degenerate_and_bad_inputs():
    with pytest.raises(DegenerateVarianceError):
        paired_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateVarianceError):
        paired_ttest([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
    with pytest.raises(InvalidArgumentError):
        paired_ttest([1.0, 2.0], [1.0])
    with pytest.raises(InvalidArgumentError):
        paired_ttest([1.0], [2.0])
    with pytest.raises(InvalidArgumentError):
        GestureScores([1.0, float("nan")], [1.0, 2.0])
    with pytest.raises(InvalidArgumentError):
        GestureScores([1.0, "fast"], [1.0, 2.0])
    with pytest.raises(InvalidArgumentError):
        GestureScores([1.0, None], [1.0, 2.0])


def test_ttest_table():
    table = paired_ttest_table({
        "fid": ([2.0, 3.0, 4.0, 5.0], [1.0, 1.0, 1.0, 1.0]),
        "kid": GestureScores([0.1, 0.2, 0.15], [0.2, 0.25, 0.3]),
    })
    assert list(table.columns) == ["metric", "t", "p", "better_count", "n"]
    assert list(table["metric"]) == ["fid", "kid"]
    assert table.loc[1, "better_count"] == 3


def test_feature_set_files(tmp_path):
    rows = np.random.default_rng(10).normal(size=(12, 5))
    path = tmp_path / "a.muft"
    FeatureSet(rows).save(path)
    loaded = FeatureSet.load(path)
    assert (loaded.n, loaded.d) == (12, 5)
    assert np.allclose(loaded.rows, rows, atol=1e-6)

    T.save_tensor(tmp_path / "cube.muft", np.zeros((2, 2, 2)))
    with pytest.raises(ShapeError):
        FeatureSet.load(tmp_path / "cube.muft")
    assert FeatureSet(np.arange(4.0)).d == 1
    with pytest.raises(InvalidArgumentError):
        FeatureSet([[1.0, np.inf]])


def test_eval_stats():
    rng = np.random.default_rng(11)
    rows = rng.normal(size=(30, 4))
    same = eval_stats(rows, rows, subsets=5)
    assert same["fid"] == 0.0
    assert same["kid_mean"] == pytest.approx(0.0, abs=1e-12)
    assert (same["n_a"], same["n_b"], same["d"]) == (30, 30, 4)
    shifted = eval_stats(rows, rows + 1.0, subsets=5, subset_size=10)
    assert shifted["fid"] == pytest.approx(4.0, rel=1e-6)
