"""One-step, multi-step and iterative offline RL built on the closed-form operators."""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import operators as ops
from .bc import BcConfig, PolicyHead, bc_train, condition_batch
from .critics import CriticConfig, CriticPair, make_mlp_pair, make_quantile_pair, mse_step, sarsa_train
from .data import Dataset
from .envs import rollout
from .gaussians import MixtureBatch

BehaviorFn = Callable[[np.ndarray], MixtureBatch]


class Operator(str, enum.Enum):
    SG = "sg"
    MG = "mg"
    LSE = "lse"
    JENSEN = "jensen"
    DET = "det"
    EBCQ = "ebcq"
    MODE_SELECT = "mode_select"
    BC = "bc"  # behavior mean, the unimproved baseline

    @property
    def single_gaussian(self) -> bool:
        return self is Operator.SG


@dataclass
class OneStepConfig:
    operator: Operator = Operator.MG
    log_tau: float = 0.5
    xi: float = 0.05
    n_bcq: int | None = None  # 10 for a single Gaussian, 5 for a mixture
    det_delta: float = 0.1
    det_samples: int = 50
    n_components: int | None = None  # 1 for SG, 4 otherwise
    bc: BcConfig = field(default_factory=BcConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    seed: int = 0

    def __post_init__(self):
        self.operator = Operator(self.operator)
        if self.log_tau < 0:
            raise ValueError(f"log_tau must be >= 0, got {self.log_tau}")

    @property
    def components(self) -> int:
        if self.n_components is not None:
            return self.n_components
        return 1 if self.operator.single_gaussian else self.bc.n_components

    @property
    def bcq_candidates(self) -> int:
        if self.n_bcq is not None:
            return self.n_bcq
        return 10 if self.components == 1 else 5


@dataclass
class IterativeConfig:
    steps: int = 3000
    noise_std: float = 0.1
    noise_clip: float = 0.3
    low: float = -1.0
    high: float = 1.0
    polyak_rate: float = 5e-3
    gamma: float = 0.99
    batch_size: int = 256
    log_tau: float = 0.5
    lr: float = 1e-3
    hidden: tuple[int, ...] = (64, 64)
    warm_start_steps: int = 0
    log_every: int = 100

    def __post_init__(self):
        if not self.noise_clip > 0 or self.noise_std < 0:
            raise ValueError("need noise_clip > 0 and noise_std >= 0")
        if self.log_tau < 0:
            raise ValueError(f"log_tau must be >= 0, got {self.log_tau}")


def _row_rngs(seed: int, states: np.ndarray) -> list[np.random.Generator]:
    rows = np.ascontiguousarray(states, dtype=np.float64)
    return [np.random.default_rng([seed, zlib.crc32(r.tobytes())]) for r in rows]


def _per_state_samples(mix: MixtureBatch, m: int, seed: int, states: np.ndarray) -> np.ndarray:
    """Draw m behavior actions per state from a generator keyed by (seed, state bytes)."""
    b, d = len(mix), mix.dim
    u, z = np.empty((b, m)), np.empty((b, m, d))
    for i, g in enumerate(_row_rngs(seed, states)):
        u[i] = g.random(m)
        z[i] = g.standard_normal((m, d))
    return mix.sample_from_noise(u, z)


@dataclass
class ImprovedPolicy:
    """Deterministic state -> action map from a closed-form operator.

    Sampling operators draw from a generator keyed by (seed, state bytes), so
    the same state always maps to the same action.
    """

    behavior: BehaviorFn
    critic: object
    operator: Operator
    log_tau: float = 0.5
    xi: float = 0.05
    n_bcq: int = 5
    det_delta: float = 0.1
    det_samples: int = 50
    low: np.ndarray | float = -1.0
    high: np.ndarray | float = 1.0
    seed: int = 0

    def raw_actions(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=np.float64)
        mix = self.behavior(s)
        op = self.operator
        if op is Operator.BC:
            return mix.mean()
        if op is Operator.SG:
            if mix.n_components != 1:
                raise ValueError("the single-Gaussian operator needs a one-component behavior policy")
            return ops.improve_sg_batch(mix.means[:, 0], mix.vars[:, 0], self.critic, s, self.log_tau)
        if op is Operator.MG:
            return ops.improve_mg_batch(mix, self.critic, s, self.log_tau).actions
        if op is Operator.LSE:
            return ops.improve_mg_batch(mix, self.critic, s, self.log_tau, use_jensen=False).actions
        if op is Operator.JENSEN:
            return ops.improve_mg_batch(mix, self.critic, s, self.log_tau, use_lse=False).actions
        if op is Operator.MODE_SELECT:
            return ops.mode_select_batch(mix, self.critic, s, self.xi)
        if op is Operator.EBCQ:
            return ops.best_candidate(self.critic, s, _per_state_samples(mix, self.n_bcq, self.seed, s))
        if op is Operator.DET:
            anchors = ops.best_candidate(self.critic, s, _per_state_samples(mix, self.det_samples, self.seed, s))
            return ops.improve_det_batch(anchors, self.critic, s, self.det_delta)
        raise ValueError(f"unknown operator {op}")

    def act_batch(self, states) -> np.ndarray:
        return np.clip(self.raw_actions(states), self.low, self.high)

    def act(self, state) -> np.ndarray:
        return self.act_batch(np.atleast_1d(np.asarray(state, dtype=np.float64))[None])[0]

    def __call__(self, states, rng=None) -> np.ndarray:
        return self.act_batch(states)

    def with_operator(self, operator, **kw) -> ImprovedPolicy:
        return replace(self, operator=Operator(operator), **kw)


def head_behavior(head: PolicyHead) -> BehaviorFn:
    return lambda s: condition_batch(head, s)


def wrap(behavior: BehaviorFn, critic, config: OneStepConfig, low=-1.0, high=1.0) -> ImprovedPolicy:
    return ImprovedPolicy(
        behavior, critic, config.operator, config.log_tau, config.xi, config.bcq_candidates,
        config.det_delta, config.det_samples, low, high, config.seed,
    )


@dataclass
class OneStepResult:
    policy: ImprovedPolicy
    behavior: PolicyHead
    critic: CriticPair
    bc_log: list
    sarsa_log: list


def fit_behavior(data: Dataset, config: OneStepConfig, rng) -> tuple[PolicyHead, list]:
    bcfg = replace(config.bc, n_components=config.components)
    head = PolicyHead(data.state_dim, data.action_dim, bcfg, rng)
    return head, bc_train(head, data, bcfg.steps, bcfg.batch, bcfg.lr, rng, log_every=max(1, bcfg.steps // 20))


def fit_critic(data: Dataset, config: CriticConfig, rng) -> tuple[CriticPair, list]:
    pair = make_quantile_pair(data.state_dim, data.action_dim, config, rng)
    log = sarsa_train(
        pair, data, config.steps, config.gamma, config.polyak_rate, config.batch_size, rng,
        log_every=max(1, config.steps // 20),
    )
    return pair, log


def one_step(
    data: Dataset, config: OneStepConfig, rng, low=-1.0, high=1.0, behavior: PolicyHead | None = None, critic=None
) -> OneStepResult:
    """Behavior cloning, SARSA evaluation, then a single operator application.

    Pre-fitted ``behavior`` or ``critic`` skip the corresponding stage.
    """
    bc_log, sarsa_log = [], []
    if behavior is None:
        behavior, bc_log = fit_behavior(data, config, rng)
    if critic is None:
        critic, sarsa_log = fit_critic(data, config.critic, rng)
    policy = wrap(head_behavior(behavior), critic, config, low, high)
    return OneStepResult(policy, behavior, critic, bc_log, sarsa_log)


@dataclass
class IterateResult:
    policy: ImprovedPolicy
    critic: CriticPair
    log: list[tuple]


def iterate(data: Dataset, behavior: BehaviorFn, config: IterativeConfig, rng) -> IterateResult:
    """TD training of two scalar critics with targets at smoothed operator actions.

    Each step: a' = clip(I_MG(s') + clip(sigma eps, -c, c), low, high) with
    I_MG queried on the min of the online critics; y = r + gamma (1 - d) min of
    the target critics at (s', a'); one Adam step per critic on the squared
    error; Polyak target update. One noise draw per transition is shared by
    both critics. Log rows: (step, loss_1, loss_2, mean Q, max |Q|).
    """
    ccfg = CriticConfig(hidden=config.hidden, gamma=config.gamma, polyak_rate=config.polyak_rate,
                        lr=config.lr, batch_size=config.batch_size)
    pair = make_mlp_pair(data.state_dim, data.action_dim, ccfg, rng)
    if config.warm_start_steps:
        sarsa_train(pair, data, config.warm_start_steps, config.gamma, config.polyak_rate, config.batch_size, rng)
    improved = ImprovedPolicy(behavior, pair, Operator.MG, config.log_tau, low=config.low, high=config.high)
    n = len(data)
    log = []
    for step in range(config.steps):
        idx = rng.integers(0, n, size=min(config.batch_size, n))
        s = data.states[idx].astype(np.float64)
        a = data.actions[idx].astype(np.float64)
        r = data.rewards[idx].astype(np.float64)
        s2 = data.next_states[idx].astype(np.float64)
        d = data.dones[idx].astype(np.float64)
        eps = np.clip(config.noise_std * rng.standard_normal((len(idx), data.action_dim)), -config.noise_clip, config.noise_clip)
        a2 = np.clip(improved.raw_actions(s2) + eps, config.low, config.high)
        y = r + config.gamma * (1.0 - d) * pair.target_q(s2, a2)
        losses = [mse_step(c, s, a, y) for c in pair.members]
        for c in pair.members:
            c.update_target()
        if config.log_every and (step + 1) % config.log_every == 0:
            q = pair.q(s, a)
            log.append((step + 1, losses[0], losses[1], float(q.mean()), float(np.abs(q).max())))
    return IterateResult(improved, pair, log)


def multi_step(
    data: Dataset, behavior: BehaviorFn, critic: CriticPair, config: OneStepConfig, rounds: int, eval_steps: int, rng,
    low=-1.0, high=1.0,
) -> list[ImprovedPolicy]:
    """Alternate operator application with evaluation of the new policy.

    Round t relabels every next action with pi_t(s') and continues training
    the critic pair for ``eval_steps`` (a fixed budget stands in for
    convergence). Returns [pi_1, ..., pi_{T+1}]; with ``rounds = 0`` this is
    just the one-step policy.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    policy = wrap(behavior, critic, config, low, high)
    history = [policy]
    for _ in range(rounds):
        relabeled = Dataset(
            data.states, data.actions, data.rewards, data.next_states,
            policy.act_batch(data.next_states.astype(np.float64)), data.dones, data.metadata,
        )
        ccfg = config.critic
        sarsa_train(critic, relabeled, eval_steps, ccfg.gamma, ccfg.polyak_rate, ccfg.batch_size, rng)
        policy = wrap(behavior, critic, config, low, high)
        history.append(policy)
    return history


@dataclass(frozen=True)
class SafetyReport:
    j_improved: float
    j_behavior: float
    margin: float

    @property
    def passed(self) -> bool:
        return self.j_improved >= self.j_behavior - self.margin


def safe_improvement_check(policy, behavior_policy, env, episodes: int, rng, margin: float | None = None) -> SafetyReport:
    """Monte-Carlo returns of both policies on common random numbers."""
    seed = int(rng.integers(2**63))
    j_imp, _ = rollout(env, policy, episodes, np.random.default_rng(seed))
    j_b, _ = rollout(env, behavior_policy, episodes, np.random.default_rng(seed))
    margin = 0.05 * abs(j_b) if margin is None else margin
    return SafetyReport(j_imp, j_b, margin)
