"""Desk-scale experiment runners shared by the acceptance suite and scripts/."""

from __future__ import annotations

import time
from dataclasses import replace
from functools import lru_cache

import numpy as np

from . import presets
from .algos import ImprovedPolicy, Operator, fit_behavior, fit_critic, head_behavior, iterate, one_step, wrap
from .critics import kfold_validation_curve
from .envs import ChainMdp, PointMass2D, generate_heterogeneous, rollout


def streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def chain_data(seed: int, episodes: int | None = None):
    env = ChainMdp()
    episodes = presets.EPISODES[env.name] if episodes is None else episodes
    return env, generate_heterogeneous(env, env.dataset_policies(), episodes, streams(seed, 1)[0])


def chain_support_grid(env: ChainMdp, width: float = 1.5, points: int = 7):
    """(states, actions) covering behavior mean +- width std in every state."""
    z = np.linspace(-width, width, points)
    idx = np.repeat(np.arange(env.n_states), points)
    a = np.clip(env.behavior_mean[idx] + np.tile(z, env.n_states) * env.behavior_std, -1.0, 1.0)
    return env.encode(idx), a[:, None]


def chain_sarsa_error(seed: int) -> tuple[float, float]:
    """Max |Q_hat - Q_beta| on the support grid and the training wall time."""
    env, data = chain_data(seed)
    cfg = presets.one_step_config(env.name)
    start = time.perf_counter()
    pair, _ = fit_critic(data, cfg.critic, streams(seed, 2)[1])
    elapsed = time.perf_counter() - start
    s, a = chain_support_grid(env)
    return float(np.max(np.abs(pair.q(s, a) - env.behavior_q(s, a)))), elapsed


def chain_policy_return(env: ChainMdp, policy) -> float:
    """Exact return of a deterministic policy: it only sees the K one-hot states."""
    return env.deterministic_return(policy.act_batch(env.encode(np.arange(env.n_states))))


TAU_OPERATORS = (Operator.SG, Operator.LSE, Operator.JENSEN, Operator.MG)


@lru_cache(maxsize=8)
def chain_one_step(seed: int):
    """MG one-step fit on chain data plus a one-component head for the single-Gaussian operator.

    Cached: the fits do not depend on log tau, so several criteria share them.
    """
    env, data = chain_data(seed)
    cfg = presets.one_step_config(env.name, seed=seed)
    _, r_bc, r_q, r_sg = streams(seed, 4)
    res = one_step(data, cfg, r_q, env.low, env.high, fit_behavior(data, cfg, r_bc)[0])
    sg_cfg = replace(cfg, operator=Operator.SG)
    sg_head, _ = fit_behavior(data, sg_cfg, r_sg)
    sg = wrap(head_behavior(sg_head), res.critic, sg_cfg, env.low, env.high)
    return env, data, res, sg


def chain_safe_improvement(seed: int, log_taus=(0.1, 0.5)) -> tuple[dict[tuple[str, float], float], float]:
    """Exact return of every operator (baselines once, at nan) against the exact behavior return."""
    env, _, res, sg = chain_one_step(seed)
    out = {}
    for op in Operator:
        base = sg if op is Operator.SG else res.policy
        for lt in log_taus if op in TAU_OPERATORS else (float("nan"),):
            pol = base.with_operator(op) if np.isnan(lt) else base.with_operator(op, log_tau=lt)
            out[op.value, lt] = chain_policy_return(env, pol)
    return out, env.behavior_return()


def chain_iterative(seed: int, log_tau: float = 0.5) -> dict[str, float]:
    env, data, res, _ = chain_one_step(seed)
    cfg = presets.iterative_config(env.name, log_tau=log_tau)
    start = time.perf_counter()
    it = iterate(data, head_behavior(res.behavior), cfg, streams(seed, 5)[4])
    return {
        "iterative": chain_policy_return(env, it.policy),
        "one_step": chain_policy_return(env, res.policy.with_operator(Operator.MG, log_tau=log_tau)),
        "behavior": env.behavior_return(),
        "seconds": time.perf_counter() - start,
    }


def pointmass_compare(seed: int, episodes: int | None = None, eval_episodes: int = 50) -> dict[str, float]:
    """Normalized returns of the mixture and single-Gaussian operators on the bimodal dataset."""
    env = PointMass2D()
    episodes = presets.EPISODES[env.name] if episodes is None else episodes
    r_data, r_bc, r_q, r_sg, r_eval = streams(seed, 5)
    data = generate_heterogeneous(env, env.dataset_policies(), episodes, r_data)
    cfg = presets.one_step_config(env.name, operator="mg", log_tau=0.5, seed=seed)
    head, _ = fit_behavior(data, cfg, r_bc)
    mg = one_step(data, cfg, r_q, env.low, env.high, behavior=head).policy
    sg_cfg = replace(cfg, operator=Operator.SG)
    sg_head, _ = fit_behavior(data, sg_cfg, r_sg)
    sg = wrap(head_behavior(sg_head), mg.critic, sg_cfg, env.low, env.high)
    eval_seed = int(r_eval.integers(2**63))
    policies: dict[str, ImprovedPolicy] = {
        "mode_select": mg.with_operator(Operator.MODE_SELECT),
        "mg": mg,
        "mg_bc": mg.with_operator(Operator.BC),
        "sg": sg,
        "sg_bc": sg.with_operator(Operator.BC),
    }
    scores = {}
    for name, pol in policies.items():
        raw, _ = rollout(env, pol, eval_episodes, np.random.default_rng(eval_seed))
        scores[name] = env.normalized(raw)
    return scores


def kfold_overfit(seed: int, episodes: int = 4, split_ratio: float = 0.25, checkpoints=(100, 300, 1000, 3000, 6000)):
    """Validation curve of a critic trained on a tiny slice of chain data."""
    env, data = chain_data(seed, episodes)
    cfg = presets.validation_config(env.name, split_ratio=split_ratio, checkpoints=checkpoints)
    rng = streams(seed, 4)[3]
    return kfold_validation_curve(data, cfg.split_ratio, list(cfg.checkpoints), rng, cfg.critic, reference_steps=cfg.reference_steps)
