"""Value estimation: quantile SARSA critics, MLP ensembles, and TD targets.

Critics consume concatenated (state, action) rows. Every critic-like object
here exposes ``q(states, actions)`` and ``q_and_grad(states, actions)`` so the
operators can query values and action-gradients without caring which kind of
critic sits behind them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError
from .nn import Adam, Mlp, input_gradient, load_checkpoint, polyak_update, save_checkpoint

EXTRACTION_GRID = 32


@dataclass
class CriticConfig:
    hidden: tuple[int, ...] = (64, 64)
    n_quantiles: int = 8
    gamma: float = 0.99
    polyak_rate: float = 5e-3
    lr: float = 1e-3
    batch_size: int = 256
    steps: int = 5000
    # Huber threshold; keep it below the return spread or the fit drifts toward expectiles
    huber_kappa: float = 1.0
    lr_final: float | None = None  # linear decay target over sarsa_train's steps


@dataclass(frozen=True, eq=False)
class CriticQuery:
    value: np.ndarray
    action_gradient: np.ndarray


def _rows(states, actions) -> np.ndarray:
    s = np.asarray(states, dtype=np.float64)
    a = np.asarray(actions, dtype=np.float64)
    if s.ndim == 1:
        s, a = s[None], np.atleast_1d(a)[None]
    return np.concatenate([s, a], axis=1)


def uniform_fractions(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n + 1)


def extraction_weights(fractions: np.ndarray, grid: int = EXTRACTION_GRID) -> np.ndarray:
    """Weights w with Q = w . Z, where Z holds the heads at the fraction midpoints.

    The quantile function is interpolated linearly between head midpoints
    (flat beyond the outermost heads) and averaged over ``grid`` midpoints
    (i - 1/2) / grid.
    """
    mids = 0.5 * (fractions[:-1] + fractions[1:])
    x = (np.arange(grid) + 0.5) / grid
    basis = np.eye(len(mids))
    interp = np.stack([np.interp(x, mids, basis[j]) for j in range(len(mids))], axis=1)
    return interp.mean(axis=0)


class QuantileCritic:
    """Fixed-fraction quantile network (state, action) -> N_q quantile values, with a target copy."""

    def __init__(self, state_dim: int, action_dim: int, config: CriticConfig, rng: np.random.Generator):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.config = config
        self.fractions = uniform_fractions(config.n_quantiles)
        self.midpoints = 0.5 * (self.fractions[:-1] + self.fractions[1:])
        self.net = Mlp([state_dim + action_dim, *config.hidden, config.n_quantiles], rng)
        self.target = self.net.copy()
        self.w_extract = extraction_weights(self.fractions)
        self.optimizer = Adam(self.net.parameters, lr=config.lr)

    def quantiles(self, states, actions, target: bool = False) -> np.ndarray:
        return (self.target if target else self.net).numpy_forward(_rows(states, actions))

    def mean(self, states, actions, target: bool = False) -> np.ndarray:
        return self.quantiles(states, actions, target) @ self.w_extract

    def _mean_head(self, x: Tensor) -> Tensor:
        return self.net(x) @ self.w_extract

    def q(self, states, actions) -> np.ndarray:
        return self.mean(states, actions)

    def q_and_grad(self, states, actions):
        return input_gradient(self._mean_head, _rows(states, actions), slice(self.state_dim, None))

    def update_target(self, rate: float | None = None) -> None:
        polyak_update(self.target, self.net, self.config.polyak_rate if rate is None else rate)


class MlpCritic:
    """Scalar Q network with a target copy."""

    def __init__(self, state_dim: int, action_dim: int, config: CriticConfig, rng: np.random.Generator):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.config = config
        self.net = Mlp([state_dim + action_dim, *config.hidden, 1], rng)
        self.target = self.net.copy()
        self.optimizer = Adam(self.net.parameters, lr=config.lr)

    def mean(self, states, actions, target: bool = False) -> np.ndarray:
        return (self.target if target else self.net).numpy_forward(_rows(states, actions))[:, 0]

    def q(self, states, actions) -> np.ndarray:
        return self.mean(states, actions)

    def q_and_grad(self, states, actions):
        return input_gradient(self.net, _rows(states, actions), slice(self.state_dim, None))

    def update_target(self, rate: float | None = None) -> None:
        polyak_update(self.target, self.net, self.config.polyak_rate if rate is None else rate)


class CriticPair:
    """Double-Q combination: the smaller of two critics' extracted means."""

    def __init__(self, first, second):
        self.members = (first, second)

    @property
    def state_dim(self) -> int:
        return self.members[0].state_dim

    @property
    def action_dim(self) -> int:
        return self.members[0].action_dim

    def q(self, states, actions) -> np.ndarray:
        return np.minimum(self.members[0].q(states, actions), self.members[1].q(states, actions))

    def q_and_grad(self, states, actions):
        q = extract_q(self, states, actions)
        return q.value, q.action_gradient

    def target_q(self, states, actions) -> np.ndarray:
        return np.minimum(self.members[0].mean(states, actions, True), self.members[1].mean(states, actions, True))


class EnsembleCritic:
    """M independently initialized scalar critics combined as mean minus population std."""

    def __init__(self, members: list[MlpCritic]):
        if not members:
            raise ValueError("an ensemble needs at least one member")
        self.members = list(members)

    @property
    def state_dim(self) -> int:
        return self.members[0].state_dim

    @property
    def action_dim(self) -> int:
        return self.members[0].action_dim

    def q(self, states, actions) -> np.ndarray:
        return ensemble_lcb(self, states, actions).value

    def q_and_grad(self, states, actions):
        r = ensemble_lcb(self, states, actions)
        return r.value, r.action_gradient


def extract_q(pair: CriticPair, states, actions) -> CriticQuery:
    """min_k Q^k with the minimizing critic's action-gradient (critic 1 on ties)."""
    v1, g1 = pair.members[0].q_and_grad(states, actions)
    v2, g2 = pair.members[1].q_and_grad(states, actions)
    second = v2 < v1
    return CriticQuery(np.where(second, v2, v1), np.where(second[:, None], g2, g1))


def ensemble_lcb(ensemble: EnsembleCritic, states, actions) -> CriticQuery:
    """mean - sqrt(mean((Q_k - mean)^2)); at zero spread the gradient is the first member's."""
    vals, grads = zip(*(m.q_and_grad(states, actions) for m in ensemble.members))
    q = np.stack(vals)  # (M, B)
    g = np.stack(grads)  # (M, B, d)
    mu = q.mean(axis=0)
    dev = q - mu
    std = np.sqrt(np.mean(dev * dev, axis=0))
    g_mu = g.mean(axis=0)
    tied = std <= 1e-12
    safe = np.where(tied, 1.0, std)
    # d std = mean_k dev_k (g_k - g_mu) / std
    g_std = np.einsum("mb,mbd->bd", dev, g - g_mu) / (len(ensemble.members) * safe[:, None])
    grad = np.where(tied[:, None], g[0], g_mu - g_std)
    return CriticQuery(mu - std, grad)


# ---------------------------------------------------------------- losses


def quantile_huber_loss(z: Tensor, target_quantiles: np.ndarray, fractions: np.ndarray, kappa: float = 1.0) -> Tensor:
    """Mean over the batch of sum_ij (rho_{i+1} - rho_i) |rho_hat_j - 1{d_ij < 0}| L(d_ij).

    d_ij = target_i - z_j; ``target_quantiles`` is (B, N_q) and already holds r + gamma Z'.
    """
    widths = np.diff(fractions)
    mids = 0.5 * (fractions[:-1] + fractions[1:])
    b, n = target_quantiles.shape
    d = Tensor(target_quantiles[:, :, None]) - ad.reshape(z, (b, 1, n))
    weight = widths[None, :, None] * np.abs(mids[None, None, :] - (d.data < 0))
    return ad.tsum(ad.huber(d, kappa) * weight) * (1.0 / b)


def quantile_loss(critic: QuantileCritic, batch, gamma: float) -> Tensor:
    s, a, r, s2, a2, done = batch
    zt = critic.quantiles(s2, a2, target=True)
    y = r[:, None] + gamma * (1.0 - done[:, None]) * zt
    z = critic.net(_rows(s, a))
    return quantile_huber_loss(z, y, critic.fractions, critic.config.huber_kappa)


def td_target(pair: CriticPair, r, s2, a2, done, gamma: float) -> np.ndarray:
    """r + gamma (1 - d) min_k Q_targ,k(s', a')."""
    r = np.asarray(r, dtype=np.float64)
    done = np.asarray(done, dtype=np.float64)
    bootstrap = np.where(done > 0, 0.0, pair.target_q(s2, a2))
    return r + gamma * (1.0 - done) * bootstrap


def mse_step(critic: MlpCritic, s, a, y) -> float:
    q = critic.net(_rows(s, a))
    diff = ad.reshape(q, (-1,)) - Tensor(y)
    loss = (diff * diff).mean()
    critic.optimizer.zero_grad()
    ad.backward(loss)
    critic.optimizer.step()
    return float(loss.data)


# ---------------------------------------------------------------- training


def _batch(data, idx):
    return (
        data.states[idx].astype(np.float64),
        data.actions[idx].astype(np.float64),
        data.rewards[idx].astype(np.float64),
        data.next_states[idx].astype(np.float64),
        data.next_actions[idx].astype(np.float64),
        data.dones[idx].astype(np.float64),
    )


def make_quantile_pair(state_dim: int, action_dim: int, config: CriticConfig, rng: np.random.Generator) -> CriticPair:
    return CriticPair(
        QuantileCritic(state_dim, action_dim, config, rng),
        QuantileCritic(state_dim, action_dim, config, rng),
    )


def make_mlp_pair(state_dim: int, action_dim: int, config: CriticConfig, rng: np.random.Generator) -> CriticPair:
    return CriticPair(MlpCritic(state_dim, action_dim, config, rng), MlpCritic(state_dim, action_dim, config, rng))


def sarsa_train(
    pair: CriticPair,
    data,
    steps: int,
    gamma: float,
    polyak_rate: float,
    batch_size: int,
    rng: np.random.Generator,
    log_every: int = 0,
    callback=None,
) -> list[tuple[int, float, float]]:
    """Train both critics on the dataset's recorded next actions.

    Quantile members use the Huber quantile loss, scalar members use squared
    TD error. Targets move by Polyak averaging after every step. Returns
    (step, loss_1, loss_2) rows every ``log_every`` steps. ``callback(step)``
    runs before each step and once after the last.
    """
    if data.next_actions is None:
        raise DataError("SARSA needs next actions in the dataset")
    n = len(data)
    log = []
    for step in range(steps):
        if callback is not None:
            callback(step)
        for critic in pair.members:
            cfg = critic.config
            if cfg.lr_final is not None:
                critic.optimizer.state.lr = cfg.lr + (cfg.lr_final - cfg.lr) * step / max(1, steps - 1)
        batch = _batch(data, rng.integers(0, n, size=min(batch_size, n)))
        losses = []
        for critic in pair.members:
            if isinstance(critic, QuantileCritic):
                loss = quantile_loss(critic, batch, gamma)
                critic.optimizer.zero_grad()
                ad.backward(loss)
                critic.optimizer.step()
                losses.append(float(loss.data))
            else:
                s, a, r, s2, a2, done = batch
                y = r + gamma * (1.0 - done) * critic.mean(s2, a2, target=True)
                losses.append(mse_step(critic, s, a, y))
            critic.update_target(polyak_rate)
        if log_every and (step + 1) % log_every == 0:
            log.append((step + 1, losses[0], losses[1]))
    if callback is not None:
        callback(steps)
    return log


def train_ensemble(
    ensemble: EnsembleCritic, data, steps: int, gamma: float, polyak_rate: float, batch_size: int, rng
) -> None:
    """SARSA-style squared TD training of every ensemble member on its own batches."""
    n = len(data)
    for _ in range(steps):
        for critic in ensemble.members:
            s, a, r, s2, a2, done = _batch(data, rng.integers(0, n, size=min(batch_size, n)))
            y = r + gamma * (1.0 - done) * critic.mean(s2, a2, target=True)
            mse_step(critic, s, a, y)
            critic.update_target(polyak_rate)


def kfold_validation_curve(
    data,
    split_ratio: float,
    checkpoints: list[int],
    rng: np.random.Generator,
    config: CriticConfig,
    reference: CriticPair | None = None,
    reference_steps: int = 0,
    init_seed: int | None = None,
) -> list[tuple[int, float]]:
    """Validation loss E_val (Q_ref - Q)^2 of a critic trained on a random train split.

    ``reference`` plays the role of a long-trained critic on all data; when
    omitted one is trained for ``reference_steps``. ``split_ratio`` is the
    train fraction (0.95 gives a 95/5 split).
    """
    if not checkpoints:
        raise ValueError("checkpoint list is empty")
    if not 0.0 < split_ratio < 1.0:
        raise ValueError("split_ratio must lie in (0, 1)")
    checkpoints = sorted(set(int(c) for c in checkpoints))
    sd, ad_ = data.states.shape[1], data.actions.shape[1]
    if reference is None:
        reference = make_quantile_pair(sd, ad_, config, rng)
        sarsa_train(reference, data, reference_steps, config.gamma, config.polyak_rate, config.batch_size, rng)
    perm = rng.permutation(len(data))
    n_train = max(1, int(round(split_ratio * len(data))))
    train, val = data.subset(perm[:n_train]), data.subset(perm[n_train:])
    vs, va = val.states.astype(np.float64), val.actions.astype(np.float64)
    q_ref = reference.q(vs, va)
    init_rng = rng if init_seed is None else np.random.default_rng(init_seed)
    fresh = make_quantile_pair(sd, ad_, config, init_rng)
    curve = []
    wanted = set(checkpoints)

    def record(step):
        if step in wanted:
            curve.append((step, float(np.mean((q_ref - fresh.q(vs, va)) ** 2))))

    sarsa_train(fresh, train, checkpoints[-1], config.gamma, config.polyak_rate, config.batch_size, rng, callback=record)
    return curve


# ---------------------------------------------------------------- checkpoints


def save_pair(pair: CriticPair, directory, **manifest) -> None:
    """Online networks as critic1.mlp / critic2.mlp plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = pair.members[0]
    kind = "quantile" if isinstance(first, QuantileCritic) else "mlp"
    for i, c in enumerate(pair.members, 1):
        save_checkpoint(c.net, directory / f"critic{i}.mlp")
    doc = {
        "kind": kind,
        "state_dim": first.state_dim,
        "action_dim": first.action_dim,
        "fractions": first.fractions.tolist() if kind == "quantile" else None,
        **manifest,
    }
    (directory / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_pair(directory) -> CriticPair:
    directory = Path(directory)
    doc = json.loads((directory / "manifest.json").read_text())
    members = []
    for i in (1, 2):
        net, _ = load_checkpoint(directory / f"critic{i}.mlp")
        cfg = CriticConfig(hidden=tuple(net.widths[1:-1]), n_quantiles=net.out_dim)
        cls = QuantileCritic if doc["kind"] == "quantile" else MlpCritic
        critic = cls(doc["state_dim"], doc["action_dim"], cfg, np.random.default_rng(0))
        critic.net.load_flat(net.flat())
        critic.target.load_flat(net.flat())
        members.append(critic)
    return CriticPair(*members)
