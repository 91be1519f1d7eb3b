import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cfpi.stats import (
    aggregate,
    iqm,
    iqm_weights,
    optimality_gap,
    performance_profile,
    profile_band,
    stratified_bootstrap_ci,
)

scores = arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e3, 1e3))


def test_iqm_examples():
    assert iqm(np.arange(1, 9)) == pytest.approx(4.5)
    assert iqm([0, 0, 0, 0, 100, 100, 100, 100]) == pytest.approx(50.0)
    assert iqm([7.0] * 5) == pytest.approx(7.0)
    with pytest.raises(ValueError):
        iqm([])


def test_iqm_fractional_weights():
    # n = 5: middle half is [1.25, 3.75] in rank units -> 0.75, 1, 0.75 of ranks 1..3
    np.testing.assert_allclose(iqm_weights(5), np.array([0, 0.75, 1, 0.75, 0]) / 2.5)
    assert iqm([1, 2, 3, 4, 100]) == pytest.approx((0.75 * 2 + 3 + 0.75 * 4) / 2.5)


@given(scores, st.randoms())
def test_iqm_permutation_invariant(x, rnd):
    y = list(x)
    rnd.shuffle(y)
    assert iqm(y) == pytest.approx(iqm(x), abs=1e-9)


@given(scores, st.integers(0, 39), st.floats(0, 100))
def test_iqm_monotone(x, i, bump):
    y = x.copy()
    y[i % len(y)] += bump
    assert iqm(y) >= iqm(x) - 1e-9


def test_optimality_gap_examples():
    assert optimality_gap([100.0, 100.0]) == 0.0
    assert optimality_gap([50.0, 150.0]) == 25.0
    assert optimality_gap([30.0] * 3, 80.0) == 50.0
    with pytest.raises(ValueError):
        optimality_gap([1.0], 0.0)


def test_zero_variance_interval():
    m = np.full((3, 5), 42.0)
    for stat in (np.median, iqm):
        lo, hi = stratified_bootstrap_ci(m, stat, rng=np.random.default_rng(0))
        assert lo == hi == 42.0


def test_bootstrap_deterministic_and_contains_point():
    m = np.random.default_rng(1).normal(50, 10, (4, 6))
    a = stratified_bootstrap_ci(m, iqm, rng=np.random.default_rng(9))
    b = stratified_bootstrap_ci(m, iqm, rng=np.random.default_rng(9))
    assert a == b
    assert a[0] <= np.mean(m) <= a[1]
    with pytest.raises(ValueError):
        stratified_bootstrap_ci(m, b=50)


def test_bootstrap_keeps_tasks_separate():
    # each task constant: stratified resampling can never mix tasks, so the mean is fixed
    m = np.array([[0.0] * 4, [100.0] * 4])
    assert stratified_bootstrap_ci(m, rng=np.random.default_rng(0)) == (50.0, 50.0)


def test_profile_endpoints_and_shape():
    m = np.random.default_rng(2).uniform(0, 100, (3, 7))
    eta = np.linspace(-10, 110, 61)
    f = performance_profile(m, eta)
    assert f[0] == 1.0 and f[-1] == 0.0
    assert np.all(np.diff(f) <= 0)
    assert performance_profile([[1.0, 2.0], [3.0, 4.0]], [2.5])[0] == 0.5
    with pytest.raises(ValueError):
        performance_profile(m, [3.0, 1.0])


def test_profile_area_is_mean():
    m = np.random.default_rng(3).uniform(0, 100, (5, 10))
    eta = np.linspace(0, 100, 10_001)
    f = performance_profile(m, eta)
    area = np.sum(f[1:]) * (eta[1] - eta[0])
    assert area / 100 == pytest.approx(m.mean() / 100, abs=2e-4)


def test_profile_band_brackets_curve():
    m = np.random.default_rng(4).normal(60, 20, (4, 8))
    eta = np.linspace(0, 120, 25)
    lo, hi = profile_band(m, eta, rng=np.random.default_rng(0))
    f = performance_profile(m, eta)
    assert np.all(lo <= f + 1e-12) and np.all(f <= hi + 1e-12)


def test_aggregate_fields():
    rep = aggregate(np.random.default_rng(5).normal(70, 15, (3, 5)), b=200)
    assert set(rep.estimates) == {"median", "iqm", "mean", "optimality_gap"}
    for e in rep.estimates.values():
        assert e.low <= e.point <= e.high
    assert rep.profile.shape == rep.thresholds.shape == rep.profile_low.shape


def test_rejects_missing_entries():
    with pytest.raises(ValueError):
        aggregate([[1.0, np.nan]])
