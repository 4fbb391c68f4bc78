import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradsample.errors import InputError
from gradsample.thresholds import (
    PseudoLabelSet,
    QuantileScoreThreshold,
    ThresholdTable,
    build_table,
    combine,
    filter_pseudo_labels,
    gbt_thresholds,
    score_thresholds,
)

positive = st.floats(1e-3, 50)
unit = st.floats(0.01, 1.0)


@pytest.mark.parametrize("w,expected", [(1.0, 0.9), (0.5, 0.9), (3.0, 0.3), (100.0, 0.05)])
def test_gbt_examples(w, expected):
    assert gbt_thresholds(np.array([w]))[0] == pytest.approx(expected)


@given(arrays(np.float64, 8, elements=positive), st.floats(0.05, 0.99))
def test_gbt_bounded_by_base(w, base):
    theta = gbt_thresholds(w, base)
    assert np.all(theta <= base)
    assert np.all(theta >= 0.05)


@given(positive, positive)
def test_gbt_monotone(a, b):
    lo, hi = sorted([a, b])
    t = gbt_thresholds(np.array([lo, hi]))
    assert t[0] >= t[1]


def test_gbt_rejects_bad_input():
    with pytest.raises(InputError):
        gbt_thresholds(np.array([1.0, 0.0]))
    with pytest.raises(InputError):
        gbt_thresholds(np.array([1.0]), theta_base=1.0)


def test_score_examples():
    assert score_thresholds([[]])[0] == 0.9
    assert score_thresholds([[0.5] * 100])[0] == pytest.approx(0.5)
    # fewer than min_samples falls back to the base
    assert score_thresholds([[0.2] * 5], min_samples=20)[0] == 0.9


@pytest.mark.parametrize("seed", range(5))
def test_score_quantile_of_uniform(seed):
    # base raised above 0.95 so the clamp does not hide the quantile
    scores = np.random.default_rng(seed).uniform(0, 1, 1000)
    assert score_thresholds([scores], 0.95, theta_base=0.99)[0] == pytest.approx(0.95, abs=0.02)


def test_score_clamped_to_range():
    assert score_thresholds([[0.99] * 50])[0] == 0.9
    assert score_thresholds([[0.01] * 50])[0] == 0.05


def test_rolling_window():
    src = QuantileScoreThreshold(2, quantile=0.5, window=10, min_samples=5)
    src.observe([0] * 10, [0.2] * 10)
    src.observe([0] * 10, [0.6] * 10)
    src.observe([1, 5, -1], [0.3, 0.3, 0.3])
    np.testing.assert_allclose(src.thresholds(), [0.6, 0.9])


def test_combine_examples():
    np.testing.assert_array_equal(combine([0.3, 0.9]), [0.3, 0.9])
    np.testing.assert_array_equal(combine([0.3, 0.9], [0.9, 0.6]), [0.3, 0.6])
    np.testing.assert_array_equal(combine([0.3, 0.9], [0.3, 0.9]), [0.3, 0.9])
    with pytest.raises(InputError):
        combine([0.3], [0.3, 0.4])


vec = arrays(np.float64, 5, elements=unit)


@given(vec, vec, vec)
def test_combine_laws(a, b, c):
    np.testing.assert_array_equal(combine(a, b), combine(b, a))
    np.testing.assert_array_equal(combine(combine(a, b), c), combine(a, combine(b, c)))
    np.testing.assert_array_equal(combine(a, a), a)


def test_table_invariants():
    table = ThresholdTable(0.9, [0.3, 0.9], [0.9, 0.6])
    np.testing.assert_array_equal(table.theta, [0.3, 0.6])
    assert np.all(table.theta_p <= table.theta_base)
    with pytest.raises(ValueError):
        table.theta[0] = 0.1
    np.testing.assert_array_equal(ThresholdTable.fixed(3).theta, [0.9] * 3)


def test_build_table_modes():
    w = np.array([1.0, 3.0])
    src = QuantileScoreThreshold(2, min_samples=1)
    src.observe([0, 0, 1], [0.4, 0.4, 0.95])
    np.testing.assert_allclose(build_table("fixed", 2, w).theta, [0.9, 0.9])
    np.testing.assert_allclose(build_table("gbt", 2, w).theta, [0.9, 0.3])
    np.testing.assert_allclose(build_table("score", 2, w, src).theta, [0.4, 0.9])
    np.testing.assert_allclose(build_table("combined", 2, w, src).theta, [0.4, 0.3])
    with pytest.raises(InputError):
        build_table("other", 2, w)


def preds(cls, score):
    return PseudoLabelSet(np.arange(len(cls)), np.zeros(len(cls)), cls, score)


def test_filter_all_confident():
    p = preds([0, 1, 2, 3], [1.0] * 4)
    out = filter_pseudo_labels(p, ThresholdTable.fixed(3))
    np.testing.assert_array_equal(out.cls, [0, 1, 2])  # background (3) never kept


def test_filter_boundary_inclusive():
    table = ThresholdTable(0.9, [0.3, 0.9])
    out = filter_pseudo_labels(preds([0, 0], [0.3, np.nextafter(0.3, 0)]), table)
    np.testing.assert_array_equal(out.score, [0.3])


def test_filter_impossible_threshold():
    table = ThresholdTable(0.9, [0.9, 0.9], theta=np.full(2, 1.0 + 1e-9))
    assert len(filter_pseudo_labels(preds([0, 1], [1.0, 1.0]), table)) == 0


def test_filter_unknown_class():
    with pytest.raises(InputError):
        filter_pseudo_labels(preds([5], [0.99]), ThresholdTable.fixed(3))


def test_filter_matches_brute_force():
    rng = np.random.default_rng(11)
    n = 6
    table = ThresholdTable(0.9, rng.uniform(0.05, 0.9, n))
    p = PseudoLabelSet(rng.integers(0, 40, 200), rng.integers(0, 8, 200), rng.integers(0, n + 1, 200),
                       rng.uniform(0, 1, 200), rng.uniform(0, 100, (200, 4)))
    out = filter_pseudo_labels(p, table)
    expected = [j for j in range(200) if p.cls[j] < n and p.score[j] >= table.theta[p.cls[j]]]
    np.testing.assert_array_equal(out.image, p.image[expected])
    np.testing.assert_array_equal(out.box, p.box[expected])


@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.floats(0.0, 0.5))
def test_lowering_a_threshold_never_removes_labels(seed, cls, drop):
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.05, 0.95, 5)
    p = preds(rng.integers(0, 6, 100), rng.uniform(0, 1, 100))
    before = filter_pseudo_labels(p, ThresholdTable(0.95, theta))
    lowered = theta.copy()
    lowered[cls] = max(lowered[cls] - drop, 0.0)
    after = filter_pseudo_labels(p, ThresholdTable(0.95, lowered))
    assert set(before.image.tolist()) <= set(after.image.tolist())


def test_per_image_view():
    p = PseudoLabelSet([0, 2, 0], [1, 0, 3], [1, 2, 0], [0.9, 0.8, 0.7])
    view = p.per_image(3)
    assert [c for c, _, _ in view[0]] == [1, 0]
    assert view[1] == []
    assert len(PseudoLabelSet.empty()) == 0
