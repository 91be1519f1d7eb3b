"""Synthetic environments, data-generating policies, rollouts, and exact oracles.

Environments are stateless value objects operating on batches: ``reset(rng, n)``
returns n start states and ``step(states, actions, rng)`` returns
(next_states, rewards, dones). Actions are clipped to the bounds on entry.
Every episode runs for ``horizon`` steps unless ``done`` fires first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Protocol

import numpy as np

from .data import Dataset
from .gaussians import MixtureBatch

REFERENCE_SEED = 12345
REFERENCE_EPISODES = 200


class Policy(Protocol):
    def __call__(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True)
class GaussianPolicy:
    """a = mean_fn(s) + std * eps."""

    mean_fn: Callable[[np.ndarray], np.ndarray]
    std: float | np.ndarray
    name: str = "gaussian"

    def __call__(self, states, rng):
        mu = self.mean_fn(states)
        return mu + np.asarray(self.std) * rng.standard_normal(mu.shape)


@dataclass(frozen=True)
class UniformPolicy:
    low: np.ndarray
    high: np.ndarray
    name: str = "random"

    def __call__(self, states, rng):
        return rng.uniform(self.low, self.high, (len(states), len(self.low)))


@dataclass(frozen=True)
class MixturePolicy:
    """Samples from a state-conditioned mixture ``mixture_fn(states) -> MixtureBatch``."""

    mixture_fn: Callable[[np.ndarray], MixtureBatch]
    name: str = "mixture"

    def __call__(self, states, rng):
        return self.mixture_fn(states).sample(rng, 1)[:, 0]


class Env:
    name = "env"
    state_dim = 0
    action_dim = 0
    horizon = 1
    gamma = 0.99

    @property
    def low(self) -> np.ndarray:
        return -np.ones(self.action_dim)

    @property
    def high(self) -> np.ndarray:
        return np.ones(self.action_dim)

    def clip(self, actions) -> np.ndarray:
        return np.clip(actions, self.low, self.high)

    def reset(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def step(self, states, actions, rng):
        raise NotImplementedError

    def expert_policy(self) -> Policy:
        raise NotImplementedError

    def dataset_policies(self) -> list[tuple[str, Policy, float]]:
        raise NotImplementedError

    @cached_property
    def reference_scores(self) -> tuple[float, float]:
        """(random, expert) mean returns from fixed-seed rollouts."""
        rng = np.random.default_rng(REFERENCE_SEED)
        rand, _ = rollout(self, UniformPolicy(self.low, self.high), REFERENCE_EPISODES, rng)
        rng = np.random.default_rng(REFERENCE_SEED)
        expert, _ = rollout(self, self.expert_policy(), REFERENCE_EPISODES, rng)
        return rand, expert

    def normalized(self, raw: float) -> float:
        return normalized_score(raw, *self.reference_scores)


# ---------------------------------------------------------------- quadratic bandit


@dataclass
class QuadraticBandit(Env):
    """One step: s ~ U[-1, 1]^2, reward -(a - A s)^T H (a - A s)."""

    A: np.ndarray = field(default_factory=lambda: np.array([[0.5, 0.2], [-0.3, 0.4]]))
    H: np.ndarray = field(default_factory=lambda: np.diag([1.0, 0.5]))
    offsets: np.ndarray = field(default_factory=lambda: np.array([[0.35, 0.2], [-0.3, -0.25]]))
    behavior_std: float = 0.15

    name = "quad-bandit-v0"
    state_dim = 2
    action_dim = 2
    horizon = 1
    gamma = 0.0

    def target(self, states) -> np.ndarray:
        return np.asarray(states, dtype=np.float64) @ self.A.T

    def reward(self, states, actions) -> np.ndarray:
        diff = np.asarray(actions, dtype=np.float64) - self.target(states)
        return -np.einsum("bi,ij,bj->b", diff, self.H, diff)

    def reset(self, rng, n):
        return rng.uniform(-1.0, 1.0, (n, 2))

    def step(self, states, actions, rng):
        r = self.reward(states, self.clip(actions))
        return states.copy(), r, np.ones(len(states), dtype=bool)

    def behavior_mixture(self, states) -> MixtureBatch:
        b, n = len(states), len(self.offsets)
        means = self.target(states)[:, None, :] + self.offsets[None]
        return MixtureBatch(
            np.full((b, n), 1.0 / n), means, np.full((b, n, self.action_dim), self.behavior_std**2)
        )

    def behavior_value(self, states) -> np.ndarray:
        """E_{a ~ behavior}[r | s]: -sum_i lambda_i [(mu_i - a*)^T H (mu_i - a*) + tr(H Sigma_i)]."""
        mix = self.behavior_mixture(states)
        diff = mix.means - self.target(states)[:, None, :]
        quad = np.einsum("bni,ij,bnj->bn", diff, self.H, diff)
        trace = np.einsum("bni,i->bn", mix.vars, np.diag(self.H))
        return -np.sum(mix.weights * (quad + trace), axis=1)

    def expert_policy(self):
        return lambda s, rng: self.target(s)

    def dataset_policies(self):
        return [("behavior", MixturePolicy(self.behavior_mixture), 1.0)]

    def critic(self) -> BanditCritic:
        return BanditCritic(self)


class BanditCritic:
    """Exact Q(s, a) = r(s, a) and its action-gradient for the quadratic bandit."""

    def __init__(self, env: QuadraticBandit):
        self.env = env
        self.state_dim = env.state_dim
        self.action_dim = env.action_dim

    def q(self, states, actions):
        return self.env.reward(states, actions)

    def q_and_grad(self, states, actions):
        diff = np.asarray(actions, dtype=np.float64) - self.env.target(states)
        return self.q(states, actions), -2.0 * diff @ self.env.H.T


# ---------------------------------------------------------------- chain


@dataclass
class ChainMdp(Env):
    """K states on a ring, one-hot observations, 1-D action in [-1, 1].

    s -> s + 1 (mod K) regardless of the action; r = b_s - c (a - a*_s)^2.
    The behavior policy is N(a*_s + offset_s, std^2), clipped on execution.
    """

    best_action: tuple[float, ...] = (0.6, -0.2, 0.3, -0.5)
    bonus: tuple[float, ...] = (0.1, 0.0, 0.2, 0.05)
    cost: float = 0.5
    behavior_offset: tuple[float, ...] = (-0.35, 0.3, -0.3, 0.35)
    behavior_std: float = 0.3
    horizon: int = 20
    gamma: float = 0.5

    name = "chain-v0"
    action_dim = 1

    @property
    def n_states(self) -> int:
        return len(self.best_action)

    @property
    def state_dim(self) -> int:
        return self.n_states

    def index(self, states) -> np.ndarray:
        return np.argmax(np.asarray(states), axis=1)

    def encode(self, idx) -> np.ndarray:
        return np.eye(self.n_states)[np.asarray(idx)]

    def reward_index(self, idx, actions) -> np.ndarray:
        a = np.asarray(actions, dtype=np.float64).reshape(len(idx))
        best = np.asarray(self.best_action)[idx]
        return np.asarray(self.bonus)[idx] - self.cost * (a - best) ** 2

    def reset(self, rng, n):
        return self.encode(rng.integers(0, self.n_states, n))

    def step(self, states, actions, rng):
        idx = self.index(states)
        r = self.reward_index(idx, self.clip(actions))
        return self.encode((idx + 1) % self.n_states), r, np.zeros(len(idx), dtype=bool)

    @property
    def behavior_mean(self) -> np.ndarray:
        return np.asarray(self.best_action) + np.asarray(self.behavior_offset)

    def behavior_policy(self) -> GaussianPolicy:
        means = self.behavior_mean
        return GaussianPolicy(lambda s: means[self.index(s)][:, None], self.behavior_std, "behavior")

    def expert_policy(self):
        best = np.asarray(self.best_action)
        return lambda s, rng: best[self.index(s)][:, None]

    def dataset_policies(self):
        return [("behavior", self.behavior_policy(), 1.0)]

    # exact oracles

    def transition_matrix(self) -> np.ndarray:
        return np.roll(np.eye(self.n_states), 1, axis=1)

    def expected_behavior_reward(self) -> np.ndarray:
        """E[r(s, clip(a))] under the behavior policy, from clipped-normal moments."""
        m1, m2 = clipped_normal_moments(self.behavior_mean, self.behavior_std, -1.0, 1.0)
        best = np.asarray(self.best_action)
        return np.asarray(self.bonus) - self.cost * (m2 - 2.0 * best * m1 + best**2)

    def behavior_v(self, gamma: float | None = None) -> np.ndarray:
        """Discounted V^beta = (I - gamma P)^-1 r_bar."""
        gamma = self.gamma if gamma is None else gamma
        p = self.transition_matrix()
        return np.linalg.solve(np.eye(self.n_states) - gamma * p, self.expected_behavior_reward())

    def behavior_q(self, states, actions, gamma: float | None = None) -> np.ndarray:
        """Q^beta(s, a) = r(s, a) + gamma V^beta(s + 1)."""
        gamma = self.gamma if gamma is None else gamma
        idx = self.index(states)
        v = self.behavior_v(gamma)
        return self.reward_index(idx, self.clip(actions)) + gamma * v[(idx + 1) % self.n_states]

    def exact_return(self, per_state_reward: np.ndarray) -> float:
        """Undiscounted horizon-step return averaged over uniform start states."""
        k = self.n_states
        total = 0.0
        for start in range(k):
            total += sum(per_state_reward[(start + t) % k] for t in range(self.horizon))
        return total / k

    def deterministic_return(self, actions_per_state) -> float:
        idx = np.arange(self.n_states)
        a = self.clip(np.asarray(actions_per_state, dtype=np.float64).reshape(-1, 1))[:, 0]
        return self.exact_return(self.reward_index(idx, a))

    def behavior_return(self) -> float:
        return self.exact_return(self.expected_behavior_reward())


def _phi(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _cdf(z):
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(z) / math.sqrt(2.0)))


def clipped_normal_moments(mu, sigma, lo, hi):
    """E[clip(X, lo, hi)] and E[clip(X, lo, hi)^2] for X ~ N(mu, sigma^2)."""
    mu = np.asarray(mu, dtype=np.float64)
    a, b = (lo - mu) / sigma, (hi - mu) / sigma
    pa, pb = _cdf(a), _cdf(b)
    fa, fb = _phi(a), _phi(b)
    inside = pb - pa
    m1 = lo * pa + hi * (1.0 - pb) + mu * inside + sigma * (fa - fb)
    m2 = (
        lo * lo * pa
        + hi * hi * (1.0 - pb)
        + (mu * mu + sigma * sigma) * inside
        + 2.0 * mu * sigma * (fa - fb)
        + sigma * sigma * (a * fa - b * fb)
    )
    return m1, m2


# ---------------------------------------------------------------- point mass


@dataclass
class PointMass2D(Env):
    """Planar point mass driven by a clipped force; reward is minus the distance to the goal.

    The expert is a PD controller to the goal; the mediocre policy is a more
    heavily damped PD controller to an offset point, so at any state the two
    policies disagree and a 50/50 dataset is bimodal.
    """

    goal: tuple[float, float] = (1.0, 1.0)
    offset: tuple[float, float] = (0.0, -1.4)
    dt: float = 0.1
    drag: float = 0.1
    gain: float = 2.0
    kp: float = 1.0
    kd: float = 1.2
    kd_mediocre: float = 2.0
    action_noise: float = 0.1
    start_noise: float = 0.1
    start_speed: float = 0.0
    horizon: int = 50
    gamma: float = 0.99

    name = "pointmass-bimodal-v0"
    state_dim = 4
    action_dim = 2

    def reset(self, rng, n):
        s = np.zeros((n, 4))
        s[:, :2] = rng.uniform(-self.start_noise, self.start_noise, (n, 2))
        if self.start_speed:
            s[:, 2:] = rng.uniform(-self.start_speed, self.start_speed, (n, 2))
        return s

    def step(self, states, actions, rng):
        a = self.clip(actions)
        p, v = states[:, :2], states[:, 2:]
        v2 = (1.0 - self.drag) * v + self.dt * self.gain * a
        p2 = p + self.dt * v2
        r = -np.linalg.norm(p2 - np.asarray(self.goal), axis=1)
        return np.concatenate([p2, v2], axis=1), r, np.zeros(len(states), dtype=bool)

    def pd(self, states, point, kd) -> np.ndarray:
        return np.clip(self.kp * (np.asarray(point) - states[:, :2]) - kd * states[:, 2:], -1.0, 1.0)

    def expert_mean(self, states):
        return self.pd(states, self.goal, self.kd)

    def mediocre_mean(self, states):
        return self.pd(states, np.asarray(self.goal) + np.asarray(self.offset), self.kd_mediocre)

    def expert_policy(self):
        return lambda s, rng: self.expert_mean(s)

    def dataset_policies(self):
        return [
            ("expert", GaussianPolicy(self.expert_mean, self.action_noise, "expert"), 0.5),
            ("mediocre", GaussianPolicy(self.mediocre_mean, self.action_noise, "mediocre"), 0.5),
        ]


@dataclass
class PointMassOverlap(PointMass2D):
    """Point mass with wide random starts and a farther offset target.

    Both generators then cross the same states often, so the dataset is
    bimodal state by state rather than only near the start.
    """

    offset: tuple[float, float] = (0.0, -2.0)
    start_noise: float = 1.0
    start_speed: float = 1.0

    name = "pointmass-overlap-v0"


REGISTRY: dict[str, Callable[..., Env]] = {
    "quad-bandit-v0": QuadraticBandit,
    "chain-v0": ChainMdp,
    "pointmass-bimodal-v0": PointMass2D,
    "pointmass-overlap-v0": PointMassOverlap,
}


def make_env(name: str, **overrides) -> Env:
    try:
        return REGISTRY[name](**overrides)
    except KeyError:
        raise KeyError(f"unknown environment {name!r}; known: {sorted(REGISTRY)}") from None


# ---------------------------------------------------------------- rollouts and datasets


def rollout(env: Env, policy, episodes: int, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Mean and per-episode undiscounted returns; all episodes run in one batch."""
    s = env.reset(rng, episodes)
    returns = np.zeros(episodes)
    alive = np.ones(episodes, dtype=bool)
    for _ in range(env.horizon):
        a = env.clip(policy(s, rng))
        s, r, done = env.step(s, a, rng)
        returns += np.where(alive, r, 0.0)
        alive &= ~done
        if not alive.any():
            break
    return float(returns.mean()), returns


def normalized_score(raw: float, random_ref: float, expert_ref: float) -> float:
    if not math.isfinite(random_ref) or not math.isfinite(expert_ref) or expert_ref == random_ref:
        raise ValueError(f"degenerate reference scores random={random_ref} expert={expert_ref}")
    return 100.0 * (raw - random_ref) / (expert_ref - random_ref)


def split_episodes(episodes: int, fractions) -> list[int]:
    """Largest-remainder apportionment of episodes to policies."""
    fractions = np.asarray(fractions, dtype=np.float64)
    raw = episodes * fractions
    counts = np.floor(raw).astype(int)
    short = episodes - counts.sum()
    for i in np.argsort(-(raw - counts), kind="stable")[:short]:
        counts[i] += 1
    return counts.tolist()


def _run_policy(env: Env, policy, episodes: int, rng):
    cols = {k: [] for k in ("s", "a", "r", "s2", "a2", "d")}
    s = env.reset(rng, episodes)
    a = env.clip(policy(s, rng))
    alive = np.ones(episodes, dtype=bool)
    for _ in range(env.horizon):
        s2, r, done = env.step(s, a, rng)
        a2 = env.clip(policy(s2, rng))
        for key, val in zip(cols, (s, a, r, s2, a2, done.astype(np.float64))):
            cols[key].append(val[alive])
        alive &= ~done
        if not alive.any():
            break
        s, a = s2, a2
    return [np.concatenate(v) for v in cols.values()]


def generate_heterogeneous(env: Env, policies, episodes: int, rng: np.random.Generator, **metadata) -> Dataset:
    """Roll out each (name, policy, fraction) for its share of episodes.

    The next action of each transition is the action the same policy takes at
    s' (for the final step of an episode it is drawn fresh from that policy).
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    names, pols, fracs = zip(*policies)
    if abs(sum(fracs) - 1.0) > 1e-9 or min(fracs) < 0:
        raise ValueError(f"policy fractions must be a probability vector, got {fracs}")
    counts = split_episodes(episodes, fracs)
    parts, sources = [], []
    for i, (pol, n) in enumerate(zip(pols, counts)):
        if n == 0:
            continue
        cols = _run_policy(env, pol, n, rng)
        parts.append(cols)
        sources.append(np.full(len(cols[2]), i))
    fields = [np.concatenate([p[k] for p in parts]) for k in range(6)]
    meta = {
        "env": env.name,
        "episodes": episodes,
        "policies": list(names),
        "episodes_per_policy": counts,
        "transitions_per_policy": [int(np.sum(np.concatenate(sources) == i)) for i in range(len(names))],
        **metadata,
    }
    return Dataset(*fields, metadata=meta)
