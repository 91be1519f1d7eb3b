"""Closed-form policy improvement operators.

Each operator maps a behavior model, a critic's action-gradient and a trust
region size to a deterministic action. The single-instance functions follow
the math one state at a time; the ``*_batch`` variants do the same work for
a stack of states and are what the algorithm layer calls.

A critic here is any object exposing::

    q(states, actions) -> (B,) values
    q_and_grad(states, actions) -> ((B,) values, (B, d) action gradients)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import DegenerateFilterError, InfeasibleError, NumericalError
from .gaussians import DiagGaussian, GaussianMixture, MixtureBatch, _as_mixture, pseudo_gaussian

EPS_GRAD = 1e-12
KAPPA_SQ_TOL = 1e-12


class Critic(Protocol):
    def q(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray: ...

    def q_and_grad(self, states: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class Source(enum.Enum):
    SG = "sg"
    LSE = "lse"
    JENSEN = "jensen"
    MEAN = "mean"
    SAMPLE = "sample"


@dataclass(frozen=True)
class TrustRegion:
    log_tau: float
    delta: float

    def __post_init__(self):
        if not self.log_tau >= 0:
            raise ValueError(f"log_tau must be >= 0, got {self.log_tau}")
        if not np.isfinite(self.delta):
            raise NumericalError("delta must be finite")


@dataclass(frozen=True, eq=False)
class ActionGradient:
    grad: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.grad, dtype=np.float64))
        if not np.all(np.isfinite(g)):
            raise NumericalError("action gradient has non-finite entries")
        object.__setattr__(self, "grad", g)
        object.__setattr__(self, "anchor", np.atleast_1d(np.asarray(self.anchor, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class CandidateAction:
    action: np.ndarray
    source: Source
    q_value: float
    index: int | None = None


def _check_log_tau(log_tau: float) -> None:
    if not log_tau >= 0:
        raise ValueError(f"log_tau must be >= 0, got {log_tau}")


def _check_anchor(grad: ActionGradient, expected: np.ndarray, what: str) -> None:
    if grad.anchor.shape != expected.shape or not np.allclose(grad.anchor, expected, rtol=0, atol=1e-9):
        raise ValueError(f"gradient must be anchored at the {what}")


def _shift(mean, var, g, kappa):
    """mean + kappa * (Sigma g) / ||g||_Sigma, with the anchor kept when ||g||_Sigma < EPS_GRAD."""
    sg = var * g
    norm = np.sqrt(np.sum(g * sg, axis=-1, keepdims=True))
    ok = norm >= EPS_GRAD
    scale = np.where(ok, np.asarray(kappa)[..., None] / np.where(ok, norm, 1.0), 0.0)
    return mean + scale * sg


# ---------------------------------------------------------------- single Gaussian


def delta_sg(pi_b: DiagGaussian, log_tau: float) -> float:
    return 0.5 * pi_b.log_det_2pi() + log_tau


def improve_sg(pi_b: DiagGaussian, grad_at_mean: ActionGradient, log_tau: float) -> np.ndarray:
    _check_log_tau(log_tau)
    _check_anchor(grad_at_mean, pi_b.mean, "behavior mean")
    return _shift(pi_b.mean, pi_b.var, grad_at_mean.grad, np.sqrt(2.0 * log_tau))


# ---------------------------------------------------------------- LogSumExp bound


def delta_lse(model: GaussianMixture, log_tau: float) -> float:
    m = _as_mixture(model)
    with np.errstate(divide="ignore"):
        terms = 0.5 * m.log_det_2pi() - np.log(m.weights)
    return float(np.min(terms) + log_tau)


def lse_kappa_sq(model: GaussianMixture, delta: float) -> np.ndarray:
    """kappa_i^2 = 2 (delta + log lambda_i) - log det(2 pi Sigma_i); negative means infeasible."""
    m = _as_mixture(model)
    with np.errstate(divide="ignore"):
        return 2.0 * (delta + np.log(m.weights)) - m.log_det_2pi()


def lse_candidates(model: GaussianMixture, grads: list[ActionGradient], log_tau: float):
    """Per-component maximizers; returns (actions (N, d), feasible mask (N,))."""
    _check_log_tau(log_tau)
    m = _as_mixture(model)
    if len(grads) != m.n_components:
        raise ValueError(f"need one gradient per component ({m.n_components}), got {len(grads)}")
    for g, mu in zip(grads, m.means):
        _check_anchor(g, mu, "component mean")
    ksq = lse_kappa_sq(m, delta_lse(m, log_tau))
    feasible = ksq >= -KAPPA_SQ_TOL
    kappa = np.sqrt(np.where(feasible, np.maximum(ksq, 0.0), 0.0))
    g = np.stack([gr.grad for gr in grads])
    return _shift(m.means, m.vars, g, kappa), feasible


def improve_lse(
    model: GaussianMixture,
    grads: list[ActionGradient],
    log_tau: float,
    score: Callable[[np.ndarray], np.ndarray] | None = None,
) -> CandidateAction:
    """Best feasible component solution.

    Candidates are ranked by ``score`` (e.g. a critic's Q at the state) when
    given, otherwise by each candidate's linearized objective mu_i^T g_i.
    """
    actions, feasible = lse_candidates(model, grads, log_tau)
    if not feasible.any():
        raise InfeasibleError("no mixture component admits a feasible solution")
    idx = np.flatnonzero(feasible)
    if score is None:
        values = np.array([actions[i] @ grads[i].grad for i in idx])
    else:
        values = np.asarray(score(actions[idx]), dtype=np.float64)
    best = int(np.argmax(values))
    return CandidateAction(actions[idx[best]], Source.LSE, float(values[best]), int(idx[best]))


# ---------------------------------------------------------------- Jensen bound


def delta_jensen(model: GaussianMixture, log_tau: float) -> float:
    m = _as_mixture(model)
    return float(log_tau + 0.5 * (m.weights @ m.log_det_2pi()))


def jensen_spread(model: GaussianMixture) -> float:
    """sum_i lambda_i (mu_bar - mu_i)^T Sigma_i^-1 (mu_bar - mu_i) >= 0."""
    m = _as_mixture(model)
    pg = pseudo_gaussian(m)
    diff = pg.mean - m.means
    return float(m.weights @ np.sum(diff * diff / m.vars, axis=-1))


def jensen_kappa_sq(model: GaussianMixture, log_tau: float) -> float:
    return 2.0 * log_tau - jensen_spread(model)


def improve_jensen(
    model: GaussianMixture,
    grad_at_pseudo_mean: ActionGradient,
    log_tau: float,
    score: Callable[[np.ndarray], np.ndarray] | None = None,
) -> CandidateAction:
    """Shift from the pseudo-mean; kappa^2 is clamped at 0 when the mixture spread exceeds 2 log tau."""
    _check_log_tau(log_tau)
    m = _as_mixture(model)
    pg = pseudo_gaussian(m)
    _check_anchor(grad_at_pseudo_mean, pg.mean, "pseudo-Gaussian mean")
    kappa = np.sqrt(max(jensen_kappa_sq(m, log_tau), 0.0))
    action = _shift(pg.mean, pg.var, grad_at_pseudo_mean.grad, kappa)
    if score is None:
        value = float(action @ grad_at_pseudo_mean.grad)
    else:
        value = float(np.asarray(score(action[None]))[0])
    return CandidateAction(action, Source.JENSEN, value)


# ---------------------------------------------------------------- deterministic behavior


def improve_det(mu_b, grad: ActionGradient, delta: float) -> np.ndarray:
    if not delta >= 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    mu_b = np.atleast_1d(np.asarray(mu_b, dtype=np.float64))
    _check_anchor(grad, mu_b, "behavior action")
    return _det_shift(mu_b, grad.grad, delta)


def _det_shift(mu, g, delta):
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    ok = norm >= EPS_GRAD
    return mu + np.where(ok, np.sqrt(2.0 * delta) * g / np.where(ok, norm, 1.0), 0.0)


# ---------------------------------------------------------------- batched operators


def _tile_states(states: np.ndarray, k: int) -> np.ndarray:
    return np.repeat(states, k, axis=0)


def _q_over_candidates(critic: Critic, states: np.ndarray, cands: np.ndarray) -> np.ndarray:
    """Q at (B, K, d) candidates -> (B, K)."""
    b, k, d = cands.shape
    return critic.q(_tile_states(states, k), cands.reshape(b * k, d)).reshape(b, k)


def _check_grads_finite(g: np.ndarray) -> None:
    if not np.all(np.isfinite(g)):
        raise NumericalError("critic returned non-finite action gradients")


def improve_sg_batch(means: np.ndarray, vars_: np.ndarray, critic: Critic, states: np.ndarray, log_tau: float):
    _check_log_tau(log_tau)
    _, g = critic.q_and_grad(states, means)
    _check_grads_finite(g)
    return _shift(means, vars_, g, np.full(means.shape[0], np.sqrt(2.0 * log_tau)))


def lse_candidates_batch(mix: MixtureBatch, critic: Critic, states: np.ndarray, log_tau: float):
    """Returns (candidates (B, N, d), feasible (B, N))."""
    _check_log_tau(log_tau)
    b, n, d = mix.means.shape
    _, g = critic.q_and_grad(_tile_states(states, n), mix.means.reshape(b * n, d))
    _check_grads_finite(g)
    with np.errstate(divide="ignore"):
        logw = np.log(mix.weights)
        half_ld = 0.5 * mix.log_det_2pi()
        delta = np.min(half_ld - logw, axis=1, keepdims=True) + log_tau
        ksq = 2.0 * (delta + logw) - 2.0 * half_ld
    feasible = ksq >= -KAPPA_SQ_TOL
    kappa = np.sqrt(np.where(feasible, np.maximum(ksq, 0.0), 0.0))
    return _shift(mix.means, mix.vars, g.reshape(b, n, d), kappa), feasible


def jensen_candidates_batch(mix: MixtureBatch, critic: Critic, states: np.ndarray, log_tau: float):
    _check_log_tau(log_tau)
    pmean, pvar = mix.pseudo()
    diff = pmean[:, None, :] - mix.means
    spread = np.einsum("bn,bn->b", mix.weights, np.sum(diff * diff / mix.vars, axis=-1))
    kappa = np.sqrt(np.maximum(2.0 * log_tau - spread, 0.0))
    _, g = critic.q_and_grad(states, pmean)
    _check_grads_finite(g)
    return _shift(pmean, pvar, g, kappa)


@dataclass(frozen=True, eq=False)
class MgResult:
    actions: np.ndarray
    used_jensen: np.ndarray
    q_lse: np.ndarray
    q_jensen: np.ndarray
    lse_index: np.ndarray


def improve_mg_batch(
    mix: MixtureBatch,
    critic: Critic,
    states: np.ndarray,
    log_tau: float,
    use_lse: bool = True,
    use_jensen: bool = True,
) -> MgResult:
    """Higher-valued of the LSE and Jensen solutions per state; ties go to LSE."""
    if not (use_lse or use_jensen):
        raise ValueError("at least one candidate family is required")
    b, n, d = mix.means.shape
    rows = np.arange(b)
    q_l = np.full(b, -np.inf)
    q_j = np.full(b, -np.inf)
    a_l = np.zeros((b, d))
    a_j = np.zeros((b, d))
    idx = np.full(b, -1)
    if use_lse:
        cands, feasible = lse_candidates_batch(mix, critic, states, log_tau)
        q = np.where(feasible, _q_over_candidates(critic, states, cands), -np.inf)
        if not feasible.any(axis=1).all() and not use_jensen:
            raise InfeasibleError("no feasible LSE component for some state")
        idx = np.argmax(q, axis=1)
        a_l = cands[rows, idx]
        q_l = q[rows, idx]
    if use_jensen:
        a_j = jensen_candidates_batch(mix, critic, states, log_tau)
        q_j = critic.q(states, a_j)
    pick_j = q_j > q_l
    actions = np.where(pick_j[:, None], a_j, a_l)
    return MgResult(actions, pick_j, q_l, q_j, idx)


def mode_select_batch(mix: MixtureBatch, critic: Critic, states: np.ndarray, xi: float) -> np.ndarray:
    if not 0.0 <= xi < 1.0:
        raise ValueError(f"threshold must lie in [0, 1), got {xi}")
    keep = mix.weights > xi
    if not keep.any(axis=1).all():
        raise DegenerateFilterError(f"no component weight exceeds {xi} for some state")
    q = np.where(keep, _q_over_candidates(critic, states, mix.means), -np.inf)
    return mix.means[np.arange(len(mix)), np.argmax(q, axis=1)]


def easy_bcq_batch(mix: MixtureBatch, critic: Critic, states: np.ndarray, n_bcq: int, rng: np.random.Generator):
    if n_bcq < 1:
        raise ValueError("n_bcq must be >= 1")
    return best_candidate(critic, states, mix.sample(rng, n_bcq))


def best_candidate(critic: Critic, states: np.ndarray, cands: np.ndarray) -> np.ndarray:
    """Highest-valued row of each (K, d) candidate block; lowest index on ties."""
    q = _q_over_candidates(critic, states, cands)
    return cands[np.arange(len(cands)), np.argmax(q, axis=1)]


def improve_det_batch(anchors: np.ndarray, critic: Critic, states: np.ndarray, delta: float) -> np.ndarray:
    if not delta >= 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    _, g = critic.q_and_grad(states, anchors)
    _check_grads_finite(g)
    return _det_shift(anchors, g, delta)


def improve_det_stochastic_batch(mix: MixtureBatch, critic, states, delta: float, m: int, rng) -> np.ndarray:
    return improve_det_batch(easy_bcq_batch(mix, critic, states, m, rng), critic, states, delta)


# ---------------------------------------------------------------- single-state critic wrappers


def _one(state) -> np.ndarray:
    return np.atleast_1d(np.asarray(state, dtype=np.float64))[None]


def improve_mg(model, critic: Critic, state, log_tau: float) -> np.ndarray:
    mix = MixtureBatch.stack([_as_mixture(model)])
    s = _one(state)
    try:
        return improve_mg_batch(mix, critic, s, log_tau).actions[0]
    except InfeasibleError:
        return improve_mg_batch(mix, critic, s, log_tau, use_lse=False).actions[0]


def mode_select(model, critic: Critic, state, xi: float) -> np.ndarray:
    return mode_select_batch(MixtureBatch.stack([_as_mixture(model)]), critic, _one(state), xi)[0]


def easy_bcq(model, critic: Critic, state, n_bcq: int, rng: np.random.Generator) -> np.ndarray:
    return easy_bcq_batch(MixtureBatch.stack([_as_mixture(model)]), critic, _one(state), n_bcq, rng)[0]


def improve_det_stochastic(model, critic: Critic, state, delta: float, m: int, rng: np.random.Generator):
    if m < 1:
        raise ValueError("m must be >= 1")
    mix = MixtureBatch.stack([_as_mixture(model)])
    return improve_det_stochastic_batch(mix, critic, _one(state), delta, m, rng)[0]
