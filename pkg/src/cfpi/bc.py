"""Maximum-likelihood behavior cloning of diagonal Gaussian mixture policies."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gaussians import VAR_FLOOR, GaussianMixture, MixtureBatch
from .nn import Adam, Mlp, load_checkpoint, save_checkpoint

LOG_VAR_MIN = math.log(VAR_FLOOR)
LOG_VAR_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class BcConfig:
    n_components: int = 4
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 1e-3
    batch_size: int | None = None  # 512 for a single Gaussian, 256 for a mixture
    steps: int = 20000
    mean_init_std: float = 0.1

    @property
    def batch(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 512 if self.n_components == 1 else 256


class PolicyHead:
    """MLP state -> (means (N, d), log-variances (N, d), logits (N,))."""

    def __init__(self, state_dim: int, action_dim: int, config: BcConfig, rng: np.random.Generator):
        n, d = config.n_components, action_dim
        self.state_dim, self.action_dim, self.n_components = state_dim, d, n
        self.config = config
        self.net = Mlp([state_dim, *config.hidden, 2 * n * d + n], rng)
        # near-constant initial output: means jittered, log-variance 0, uniform weights
        last_w, last_b = self.net.weights[-1], self.net.biases[-1]
        last_w.data = last_w.data * 0.01
        b = np.zeros(2 * n * d + n)
        b[: n * d] = config.mean_init_std * rng.standard_normal(n * d)
        last_b.data = b
        self.optimizer = Adam(self.net.parameters, lr=config.lr)

    @property
    def parameters(self) -> list[Tensor]:
        return self.net.parameters

    def heads(self, states) -> tuple[Tensor, Tensor, Tensor]:
        """Tensors of means (B, N, d), log-variances (B, N, d), log-weights (B, N)."""
        out = self.net(np.asarray(states, dtype=np.float64))
        b = out.shape[0]
        n, d = self.n_components, self.action_dim
        mu, lv, logits = (out[:, : n * d], out[:, n * d : 2 * n * d], out[:, 2 * n * d :])
        lv = ad.clip(lv, LOG_VAR_MIN, LOG_VAR_MAX)
        log_w = logits - ad.reshape(ad.logsumexp(logits, axis=1), (b, 1))
        return ad.reshape(mu, (b, n, d)), ad.reshape(lv, (b, n, d)), log_w


def bc_loss(policy: PolicyHead, states, actions) -> Tensor:
    """Mean negative log-likelihood of the actions under the conditioned mixture."""
    mu, lv, log_w = policy.heads(states)
    a = np.asarray(actions, dtype=np.float64)[:, None, :]
    diff = Tensor(a) - mu
    comp = ad.tsum(diff * diff * ad.exp(-lv) + lv, axis=2) * -0.5 - 0.5 * policy.action_dim * _LOG_2PI
    return -ad.tmean(ad.logsumexp(log_w + comp, axis=1))


def bc_train(policy: PolicyHead, data, steps: int, batch_size: int, lr: float, rng, log_every: int = 0):
    """Adam on the NLL; returns (step, loss) rows every ``log_every`` steps."""
    if len(data) == 0:
        raise ValueError("cannot clone an empty dataset")
    policy.optimizer.state.lr = lr
    n = len(data)
    log = []
    for step in range(steps):
        idx = rng.integers(0, n, size=min(batch_size, n))
        loss = bc_loss(policy, data.states[idx], data.actions[idx])
        policy.optimizer.zero_grad()
        ad.backward(loss)
        policy.optimizer.step()
        if log_every and (step + 1) % log_every == 0:
            log.append((step + 1, float(loss.data)))
    return log


def condition_batch(policy: PolicyHead, states) -> MixtureBatch:
    out = policy.net.numpy_forward(np.asarray(states, dtype=np.float64))
    b = out.shape[0]
    n, d = policy.n_components, policy.action_dim
    mu = out[:, : n * d].reshape(b, n, d)
    lv = np.clip(out[:, n * d : 2 * n * d], LOG_VAR_MIN, LOG_VAR_MAX).reshape(b, n, d)
    logits = out[:, 2 * n * d :]
    logits = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return MixtureBatch(w, mu, np.exp(lv))


def condition(policy: PolicyHead, state) -> GaussianMixture:
    return condition_batch(policy, np.atleast_1d(np.asarray(state, dtype=np.float64))[None])[0]


def mean_nll(policy: PolicyHead, states, actions) -> float:
    return float(bc_loss(policy, states, actions).data)


def save_policy_head(policy: PolicyHead, path, **metadata) -> None:
    save_checkpoint(
        policy.net, path, kind="policy_head", state_dim=policy.state_dim, action_dim=policy.action_dim,
        n_components=policy.n_components, **metadata,
    )


def load_policy_head(path) -> PolicyHead:
    net, meta = load_checkpoint(path)
    cfg = BcConfig(n_components=meta["n_components"], hidden=tuple(net.widths[1:-1]))
    head = PolicyHead.__new__(PolicyHead)
    head.state_dim, head.action_dim, head.n_components = meta["state_dim"], meta["action_dim"], meta["n_components"]
    head.config, head.net = cfg, net
    head.optimizer = Adam(net.parameters, lr=cfg.lr)
    return head
