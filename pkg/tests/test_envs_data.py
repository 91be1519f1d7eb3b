import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfpi.data import MAGIC, Dataset, fnv1a64, read_dataset, write_dataset
from cfpi.envs import (
    ChainMdp,
    Env,
    GaussianPolicy,
    PointMass2D,
    QuadraticBandit,
    clipped_normal_moments,
    generate_heterogeneous,
    make_env,
    normalized_score,
    rollout,
    split_episodes,
)
from cfpi.errors import DataError, DimensionError, TruncatedDatasetError

from _helpers import seeds


class ZeroEnv(Env):
    state_dim, action_dim, horizon = 1, 1, 5

    def reset(self, rng, n):
        return np.zeros((n, 1))

    def step(self, states, actions, rng):
        return states, np.zeros(len(states)), np.zeros(len(states), dtype=bool)


def small_dataset(rng, n=50, next_actions=True):
    return Dataset(
        rng.normal(size=(n, 3)), rng.normal(size=(n, 2)), rng.normal(size=n), rng.normal(size=(n, 3)),
        rng.normal(size=(n, 2)) if next_actions else None, (rng.random(n) < 0.1).astype(float), {"env": "x", "seed": 1},
    )


# ---------------------------------------------------------------- file format


@given(seeds, st.booleans())
def test_round_trip(tmp_path_factory, seed, with_next):
    path = tmp_path_factory.mktemp("d") / "a.cfpi"
    data = small_dataset(np.random.default_rng(seed), next_actions=with_next)
    write_dataset(data, path)
    back = read_dataset(path)
    for name in ("states", "actions", "rewards", "next_states", "dones"):
        np.testing.assert_array_equal(getattr(back, name), getattr(data, name))
    if with_next:
        np.testing.assert_array_equal(back.next_actions, data.next_actions)
    else:
        assert back.next_actions is None
    assert back.metadata == data.metadata
    assert back.content_hash() == data.content_hash()


def test_payload_layout_is_field_blocks(tmp_path):
    data = small_dataset(np.random.default_rng(0), n=4)
    write_dataset(data, tmp_path / "a.cfpi")
    raw = (tmp_path / "a.cfpi").read_bytes()
    body = raw[len(raw) - len(data.payload()) :]
    np.testing.assert_array_equal(np.frombuffer(body[: 4 * 12], "<f4").reshape(4, 3), data.states)


def test_truncated(tmp_path):
    write_dataset(small_dataset(np.random.default_rng(0)), tmp_path / "a.cfpi")
    raw = (tmp_path / "a.cfpi").read_bytes()
    for cut in (len(raw) - 3, 12, 30):
        (tmp_path / "t.cfpi").write_bytes(raw[:cut])
        with pytest.raises(TruncatedDatasetError):
            read_dataset(tmp_path / "t.cfpi")


def test_dim_mismatch(tmp_path):
    write_dataset(small_dataset(np.random.default_rng(0)), tmp_path / "a.cfpi")
    raw = bytearray((tmp_path / "a.cfpi").read_bytes())
    struct.pack_into("<I", raw, len(MAGIC), 4)  # header claims state dim 4, payload holds 3
    (tmp_path / "b.cfpi").write_bytes(bytes(raw))
    with pytest.raises(DimensionError):
        read_dataset(tmp_path / "b.cfpi")


def test_bad_magic(tmp_path):
    (tmp_path / "x.cfpi").write_bytes(b"NOPE!" + bytes(40))
    with pytest.raises(DataError):
        read_dataset(tmp_path / "x.cfpi")


def test_fnv_reference_values():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


# ---------------------------------------------------------------- environments


def test_normalized_score():
    assert normalized_score(7.0, -3.0, 7.0) == 100.0
    assert normalized_score(-3.0, -3.0, 7.0) == 0.0
    assert normalized_score(2.0, -3.0, 7.0) == 50.0
    with pytest.raises(ValueError):
        normalized_score(1.0, 2.0, 2.0)


def test_zero_reward_rollout():
    mean, returns = rollout(ZeroEnv(), lambda s, rng: np.zeros((len(s), 1)), 10, np.random.default_rng(0))
    assert mean == 0.0 and np.all(returns == 0.0)


def test_bandit_optimum_returns_zero():
    env = QuadraticBandit()
    mean, _ = rollout(env, env.expert_policy(), 100, np.random.default_rng(0))
    assert mean == pytest.approx(0.0, abs=1e-12)


def test_bandit_analytic_critic():
    env = QuadraticBandit()
    rng = np.random.default_rng(1)
    s, a = env.reset(rng, 6), rng.uniform(-1, 1, (6, 2))
    q, g = env.critic().q_and_grad(s, a)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        np.testing.assert_allclose(g[:, k], (env.critic().q(s, a + e) - env.critic().q(s, a - e)) / (2 * h), atol=1e-6)
    draws = env.dataset_policies()[0][1](np.repeat(s[:1], 200_000, 0), rng)
    mc = env.reward(np.repeat(s[:1], 200_000, 0), draws)
    assert abs(mc.mean() - env.behavior_value(s[:1])[0]) < 4 * mc.std() / np.sqrt(len(mc))


def test_chain_dp_matches_dynamics():
    env = ChainMdp()
    idx = np.arange(env.n_states)
    s2, _, _ = env.step(env.encode(idx), np.zeros((env.n_states, 1)), np.random.default_rng(0))
    np.testing.assert_array_equal(s2, env.transition_matrix()[idx])


def test_chain_rollout_matches_exact_return():
    env = ChainMdp()
    rng = np.random.default_rng(2)
    mean, returns = rollout(env, env.behavior_policy(), 4000, rng)
    assert abs(mean - env.behavior_return()) < 4 * returns.std() / np.sqrt(len(returns))
    fixed = np.array([0.1, -0.3, 0.9, 0.0])
    mean, _ = rollout(env, lambda s, r: fixed[env.index(s)][:, None], 8, rng)
    assert mean == pytest.approx(env.deterministic_return(fixed), abs=1e-9)


def test_chain_behavior_q_is_bellman_consistent():
    env = ChainMdp()
    v = env.behavior_v()
    q_next = env.expected_behavior_reward() + env.gamma * v[(np.arange(4) + 1) % 4]
    np.testing.assert_allclose(v, q_next, atol=1e-12)


@given(st.floats(-2, 2), st.floats(0.05, 2))
def test_clipped_moments_against_quadrature(mu, sigma):
    x = np.linspace(mu - 12 * sigma, mu + 12 * sigma, 400_001)
    w = np.exp(-0.5 * ((x - mu) / sigma) ** 2)
    w /= w.sum()
    c = np.clip(x, -1, 1)
    m1, m2 = clipped_normal_moments(mu, sigma, -1.0, 1.0)
    assert float(m1) == pytest.approx(w @ c, abs=1e-6)
    assert float(m2) == pytest.approx(w @ c**2, abs=1e-6)


def test_make_env():
    assert isinstance(make_env("pointmass-bimodal-v0"), PointMass2D)
    with pytest.raises(KeyError):
        make_env("nope")


def test_reference_scores_ordered():
    for name in ("quad-bandit-v0", "chain-v0", "pointmass-bimodal-v0"):
        rand, expert = make_env(name).reference_scores
        assert expert > rand


# ---------------------------------------------------------------- generation


@given(st.integers(1, 1000))
def test_even_split(episodes):
    a, b = split_episodes(episodes, [0.5, 0.5])
    assert abs(a - b) <= 1 and a + b == episodes


def test_generation_errors():
    env = ChainMdp()
    with pytest.raises(ValueError):
        generate_heterogeneous(env, env.dataset_policies(), 0, np.random.default_rng(0))
    pol = env.behavior_policy()
    with pytest.raises(ValueError):
        generate_heterogeneous(env, [("a", pol, 0.5), ("b", pol, 0.6)], 4, np.random.default_rng(0))


def test_single_policy_is_unimodal():
    env = ChainMdp()
    data = generate_heterogeneous(env, env.dataset_policies(), 100, np.random.default_rng(0))
    idx = env.index(data.states)
    for k in range(env.n_states):
        a = data.actions[idx == k, 0]
        assert abs(np.median(a) - env.behavior_mean[k]) < 0.05
        assert separation(a) < 3.2  # a single Gaussian scores about 2.65


def separation(x):
    """Two-cluster gap statistic: distance between 1-D 2-means centers over pooled within-cluster sd."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    best = None
    for cut in range(len(x) // 10, len(x) - len(x) // 10, max(1, len(x) // 200)):
        lo, hi = x[:cut], x[cut:]
        sse = lo.var() * len(lo) + hi.var() * len(hi)
        if best is None or sse < best[0]:
            best = (sse, hi.mean() - lo.mean(), np.sqrt(sse / len(x)))
    return best[1] / best[2]


def test_pointmass_dataset_is_bimodal():
    env = PointMass2D()
    data = generate_heterogeneous(env, env.dataset_policies(), 100, np.random.default_rng(0))
    assert data.metadata["episodes_per_policy"] == [50, 50]
    # actions taken around one state region: the first step of every episode
    first = np.linalg.norm(data.states[:, 2:], axis=1) < 1e-6
    a = data.actions[first]
    direction = np.asarray(env.offset) / np.linalg.norm(env.offset)
    assert separation(a @ direction) > 4.0
