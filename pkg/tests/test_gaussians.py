import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfpi import gaussians as gm
from cfpi.errors import DegenerateFilterError, DimensionError
from cfpi.gaussians import (
    DiagGaussian,
    GaussianMixture,
    MixtureBatch,
    jensen_lower_bound,
    log_prob,
    lse_lower_bound,
    nontrivial_components,
    pseudo_gaussian,
)

from _helpers import random_mixture, seeds


def phi(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def test_standard_normal_at_mode():
    assert log_prob(DiagGaussian([0.0], [1.0]), [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_duplicate_components_collapse():
    g = DiagGaussian([0.3, -1.0], [0.5, 2.0])
    mix = GaussianMixture([0.5, 0.5], [g.mean, g.mean], [g.var, g.var])
    a = np.array([0.1, 0.2])
    assert log_prob(mix, a) == pytest.approx(log_prob(g, a), abs=1e-12)
    assert lse_lower_bound(mix, a) == pytest.approx(log_prob(mix, a) - math.log(2), abs=1e-12)


def test_two_component_density():
    mix = GaussianMixture([0.3, 0.7], [[-1.0], [1.0]], [[1.0], [1.0]])
    assert log_prob(mix, [0.0]) == pytest.approx(math.log(0.3 * phi(1) + 0.7 * phi(-1)), abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        log_prob(DiagGaussian([0.0, 0.0], [1.0, 1.0]), [0.0])


def test_invalid_weights():
    with pytest.raises(ValueError):
        GaussianMixture([0.6, 0.6], [[0.0], [1.0]], [[1.0], [1.0]])


@given(seeds)
def test_bounds_below_log_prob(seed):
    rng = np.random.default_rng(seed)
    m = random_mixture(rng, spread=2.0)
    a = rng.normal(0.0, 3.0, m.dim)
    lp = log_prob(m, a)
    assert lse_lower_bound(m, a) <= lp + 1e-12
    assert jensen_lower_bound(m, a) <= lp + 1e-12


@given(seeds)
def test_single_component_bounds_are_exact(seed):
    rng = np.random.default_rng(seed)
    m = random_mixture(rng, n=1)
    a = rng.normal(0.0, 2.0, m.dim)
    assert lse_lower_bound(m, a) == pytest.approx(log_prob(m, a), abs=1e-10)
    assert jensen_lower_bound(m, a) == pytest.approx(log_prob(m, a), abs=1e-10)


@given(seeds)
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    m = random_mixture(rng)
    p = rng.permutation(m.n_components)
    shuffled = GaussianMixture(m.weights[p], m.means[p], m.vars[p])
    a = rng.normal(0.0, 1.0, m.dim)
    assert log_prob(shuffled, a) == pytest.approx(log_prob(m, a), abs=1e-10)


@given(seeds)
def test_pseudo_gaussian_invariants(seed):
    m = random_mixture(np.random.default_rng(seed))
    pg = pseudo_gaussian(m)
    np.testing.assert_allclose(1.0 / pg.var, m.weights @ (1.0 / m.vars), rtol=1e-12)
    np.testing.assert_allclose(pg.mean, pg.var * (m.weights @ (m.means / m.vars)), rtol=1e-12, atol=1e-12)


@given(seeds)
def test_pseudo_mean_maximizes_jensen_bound(seed):
    rng = np.random.default_rng(seed)
    m = random_mixture(rng)
    top = jensen_lower_bound(m, pseudo_gaussian(m).mean)
    for _ in range(5):
        assert jensen_lower_bound(m, pseudo_gaussian(m).mean + 0.1 * rng.standard_normal(m.dim)) <= top


def test_pseudo_gaussian_examples():
    pg = pseudo_gaussian(GaussianMixture([0.5, 0.5], [[-1.0], [1.0]], [[1.0], [1.0]]))
    assert pg.mean[0] == pytest.approx(0.0) and pg.var[0] == pytest.approx(1.0)
    pg = pseudo_gaussian(GaussianMixture([0.5, 0.5], [[0.0], [0.0]], [[1.0], [4.0]]))
    assert pg.var[0] == pytest.approx(1.6)
    g = GaussianMixture([1.0], [[0.4, -0.2]], [[0.3, 2.0]])
    pg = pseudo_gaussian(g)
    np.testing.assert_allclose(pg.mean, g.means[0])
    np.testing.assert_allclose(pg.var, g.vars[0])


def test_degenerate_sample(monkeypatch):
    # the example's 1e-12 variance sits below the default floor; lower the floor to exercise it
    monkeypatch.setattr(gm, "VAR_FLOOR", 1e-14)
    g = DiagGaussian([0.25, -0.5], [1e-12, 1e-12])
    draws = gm.sample(g, np.random.default_rng(0), 100)
    assert np.max(np.abs(draws - g.mean)) < 1e-4


def test_variance_floor():
    assert DiagGaussian([0.0], [1e-12]).var[0] == gm.VAR_FLOOR


def test_sample_moments():
    mix = GaussianMixture([0.3, 0.7], [[-1.0, 0.0], [2.0, 1.0]], [[0.5, 1.0], [1.0, 0.2]])
    rng = np.random.default_rng(1)
    n = 100_000
    draws = gm.sample(mix, rng, n)
    var = mix.weights @ (mix.vars + mix.means**2) - mix.mean() ** 2
    assert np.all(np.abs(draws.mean(0) - mix.mean()) < 3 * np.sqrt(var / n))
    # component frequencies from the same inverse-CDF path the batch sampler uses
    u = rng.random((1, n))
    batch = MixtureBatch.stack([mix])
    picks = batch.sample_from_noise(u, np.zeros((1, n, 2)))[0, :, 0]
    assert abs(np.mean(picks == -1.0) - 0.3) < 0.01


def test_nontrivial_components():
    assert [i for i, _ in nontrivial_components(GaussianMixture([0.9, 0.1], [[0.0], [1.0]], [[1.0], [1.0]]), 0.05)] == [0, 1]
    assert [i for i, _ in nontrivial_components(GaussianMixture([0.97, 0.03], [[0.0], [1.0]], [[1.0], [1.0]]), 0.05)] == [0]
    with pytest.raises(DegenerateFilterError):
        nontrivial_components(GaussianMixture([0.5, 0.5], [[0.0], [1.0]], [[1.0], [1.0]]), 0.5)


@given(seeds)
def test_json_round_trip(seed):
    m = random_mixture(np.random.default_rng(seed))
    back = gm.from_json(gm.to_json(m))
    np.testing.assert_array_equal(back.weights, m.weights)
    np.testing.assert_array_equal(back.means, m.means)
    np.testing.assert_array_equal(back.vars, m.vars)


def test_single_gaussian_serializes_as_one_component():
    doc = gm.to_json(DiagGaussian([1.0, 2.0], [0.5, 0.5]))
    assert '"N": 1' in doc


@given(seeds, st.integers(1, 5))
def test_batch_matches_single(seed, b):
    rng = np.random.default_rng(seed)
    d, n = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    ms = [random_mixture(rng, d, n) for _ in range(b)]
    batch = MixtureBatch.stack(ms)
    pm, pv = batch.pseudo()
    for i, m in enumerate(ms):
        pg = pseudo_gaussian(m)
        np.testing.assert_allclose(pm[i], pg.mean, atol=1e-12)
        np.testing.assert_allclose(pv[i], pg.var, rtol=1e-12)
        np.testing.assert_allclose(batch.mean()[i], m.mean(), atol=1e-12)
