import math

import numpy as np
import pytest
from hypothesis import given

from cfpi.bc import BcConfig, PolicyHead, bc_loss, bc_train, condition, condition_batch, load_policy_head, mean_nll, save_policy_head
from cfpi.data import Dataset
from cfpi.envs import PointMassOverlap, generate_heterogeneous
from cfpi.gaussians import log_prob

from _helpers import seeds


def fixed_head(means, log_vars, logits, state_dim=1):
    """A head whose output ignores the state: zero last-layer weights, chosen biases."""
    n, d = np.shape(means)
    head = PolicyHead(state_dim, d, BcConfig(n_components=n, hidden=(4,)), np.random.default_rng(0))
    head.net.weights[-1].data[:] = 0.0
    head.net.biases[-1].data = np.concatenate([np.ravel(means), np.ravel(log_vars), np.ravel(logits)])
    return head


def data_from(states, actions):
    n = len(actions)
    return Dataset(states, actions, np.zeros(n), states, actions, np.zeros(n), {})


def test_loss_at_mean_unit_variance():
    head = fixed_head([[0.3]], [[0.0]], [0.0])
    assert float(bc_loss(head, np.zeros((1, 1)), [[0.3]]).data) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)


def test_single_component_is_gaussian_nll():
    head = fixed_head([[0.2, -0.4]], [[math.log(0.5), math.log(2.0)]], [0.0])
    a = np.array([[1.0, 0.0], [-0.5, 0.3]])
    var = np.array([0.5, 2.0])
    nll = 0.5 * np.sum((a - [0.2, -0.4]) ** 2 / var + np.log(2 * math.pi * var), axis=1)
    assert float(bc_loss(head, np.zeros((2, 1)), a).data) == pytest.approx(nll.mean(), abs=1e-12)


@given(seeds)
def test_loss_matches_log_prob(seed):
    rng = np.random.default_rng(seed)
    head = PolicyHead(3, 2, BcConfig(n_components=3, hidden=(8,)), rng)
    head.net.weights[-1].data = rng.normal(scale=0.3, size=head.net.weights[-1].shape)
    s, a = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    mix = condition_batch(head, s)
    ref = -np.mean([log_prob(mix[i], a[i]) for i in range(6)])
    assert mean_nll(head, s, a) == pytest.approx(ref, abs=1e-10)


def test_two_mode_recovery():
    rng = np.random.default_rng(0)
    n = 4000
    left = rng.random(n) < 0.3
    a = np.where(left, -0.6, 0.5)[:, None] + 0.1 * rng.standard_normal((n, 1))
    head = PolicyHead(1, 1, BcConfig(n_components=2, hidden=(16,)), rng)
    bc_train(head, data_from(np.zeros((n, 1)), a), 2000, 256, 1e-2, rng)
    m = condition(head, np.zeros(1))
    order = np.argsort(m.means[:, 0])
    np.testing.assert_allclose(m.means[order, 0], [-0.6, 0.5], atol=0.1)
    np.testing.assert_allclose(m.weights[order], [0.3, 0.7], atol=0.05)


def test_constant_actions_collapse():
    # Adam jitter on the mean keeps the variance near jitter^2; the floor is only reached asymptotically
    rng = np.random.default_rng(1)
    s = np.zeros((256, 2))
    a = np.full((256, 1), 0.25)
    head = PolicyHead(2, 1, BcConfig(n_components=1, hidden=(8,)), rng)
    bc_train(head, data_from(s, a), 1500, 256, 2e-2, rng)
    m = condition_batch(head, s[:1])
    assert abs(m.means[0, 0, 0] - 0.25) < 1e-3
    assert m.vars[0, 0, 0] < 1e-3


def test_condition_properties():
    rng = np.random.default_rng(2)
    head = PolicyHead(2, 2, BcConfig(n_components=3, hidden=(8,)), rng)
    s = np.array([0.4, -1.0])
    a, b = condition(head, s), condition(head, s)
    np.testing.assert_array_equal(a.means, b.means)
    assert a.weights.sum() == pytest.approx(1.0)
    ordered = condition(fixed_head([[0.0], [1.0], [2.0]], [[0.0]] * 3, [0.1, 2.0, -1.0]), np.zeros(1))
    assert list(np.argsort(-ordered.weights)) == [1, 0, 2]
    single = condition(fixed_head([[0.0, 1.0]], [[0.0, 0.0]], [0.0]), np.zeros(1))
    assert single.n_components == 1 and single.weights[0] == 1.0


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    head = PolicyHead(2, 2, BcConfig(n_components=2, hidden=(5,)), rng)
    save_policy_head(head, tmp_path / "h.mlp")
    back = load_policy_head(tmp_path / "h.mlp")
    s = rng.normal(size=(3, 2))
    np.testing.assert_array_equal(condition_batch(back, s).means, condition_batch(head, s).means)


def test_mixture_beats_single_gaussian_on_bimodal_data():
    env = PointMassOverlap()
    gaps = []
    for seed in range(3):
        train = generate_heterogeneous(env, env.dataset_policies(), 200, np.random.default_rng(seed))
        held = generate_heterogeneous(env, env.dataset_policies(), 40, np.random.default_rng(100 + seed))
        s, a = held.states.astype(np.float64), held.actions.astype(np.float64)
        nll = []
        for n in (1, 4):
            cfg = BcConfig(n_components=n, steps=3000)
            head = PolicyHead(4, 2, cfg, np.random.default_rng(seed))
            bc_train(head, train, cfg.steps, cfg.batch, cfg.lr, np.random.default_rng(seed + 7))
            nll.append(mean_nll(head, s, a))
        gaps.append(nll[0] - nll[1])
    assert np.mean(gaps) >= 0.2, gaps
