"""Oracle suites comparing the closed forms against independent numerical solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import oracles
from .envs import ChainMdp
from .gaussians import GaussianMixture, jensen_lower_bound, log_prob, lse_lower_bound, pseudo_gaussian
from .nn import Mlp
from .operators import (
    ActionGradient,
    delta_jensen,
    delta_lse,
    delta_sg,
    improve_jensen,
    improve_lse,
    improve_sg,
    jensen_kappa_sq,
)

LOG_TAUS = (0.1, 0.5, 1.5)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    instances: int
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


@dataclass(frozen=True)
class Instance:
    mixture: GaussianMixture
    grads: np.ndarray  # (N, d): gradient at each component mean
    grad_pseudo: np.ndarray  # (d,): gradient at the pseudo-mean
    log_tau: float


def random_instance(rng: np.random.Generator, spread: float = 0.3) -> Instance:
    """d in 1..10, N in 1..8, variances log-uniform in [0.1, 10].

    Component means sit ``spread`` standard deviations apart on average so the
    Jensen problem is usually feasible.
    """
    d = int(rng.integers(1, 11))
    n = int(rng.integers(1, 9))
    var = np.exp(rng.uniform(np.log(0.1), np.log(10.0), (n, d)))
    center = rng.normal(0.0, 1.0, d)
    means = center + spread * np.sqrt(var) * rng.standard_normal((n, d))
    w = rng.dirichlet(np.ones(n))
    mix = GaussianMixture(w, means, var)
    return Instance(mix, rng.standard_normal((n, d)), rng.standard_normal(d), float(rng.choice(LOG_TAUS)))


def relative_gap(value: float, reference: float) -> float:
    return abs(value - reference) / max(1.0, abs(reference))


def qclp_gaps(inst: Instance) -> dict[str, float]:
    """Relative objective gaps of SG (component 0), LSE and Jensen against the bisection oracles.

    Jensen is reported only when its trust region is non-empty.
    """
    m = inst.mixture
    g0 = inst.grads[0]
    comp = m.components[0]
    sg = improve_sg(comp, ActionGradient(g0, comp.mean), inst.log_tau)
    _, sg_ref = oracles.solve_gaussian_qclp(comp.mean, comp.var, g0, delta_sg(comp, inst.log_tau))
    out = {"sg": relative_gap(float(sg @ g0), sg_ref)}

    grads = [ActionGradient(g, mu) for g, mu in zip(inst.grads, m.means)]
    lse = improve_lse(m, grads, inst.log_tau)
    _, lse_ref, _ = oracles.solve_lse_problem(m.weights, m.means, m.vars, inst.grads, delta_lse(m, inst.log_tau))
    out["lse"] = relative_gap(lse.q_value, lse_ref)

    pg = pseudo_gaussian(m)
    jen = improve_jensen(m, ActionGradient(inst.grad_pseudo, pg.mean), inst.log_tau)
    mu_ref, jen_ref = oracles.solve_jensen_problem(
        m.weights, m.means, m.vars, inst.grad_pseudo, delta_jensen(m, inst.log_tau)
    )
    if mu_ref is not None and jensen_kappa_sq(m, inst.log_tau) >= 0:
        out["jensen"] = relative_gap(jen.q_value, jen_ref)
    return out


def kkt_residual(inst: Instance) -> float:
    """|-log pi(mu_sg) - delta| for the first component as a single Gaussian."""
    comp = inst.mixture.components[0]
    g0 = inst.grads[0]
    mu = improve_sg(comp, ActionGradient(g0, comp.mean), inst.log_tau)
    return abs(-log_prob(comp, mu) - delta_sg(comp, inst.log_tau))


def qclp_suite(n: int, rng) -> list[SuiteResult]:
    worst = {"sg": 0.0, "lse": 0.0, "jensen": 0.0}
    counts = {"sg": 0, "lse": 0, "jensen": 0}
    kkt = 0.0
    for _ in range(n):
        inst = random_instance(rng)
        for k, v in qclp_gaps(inst).items():
            worst[k] = max(worst[k], v)
            counts[k] += 1
        kkt = max(kkt, kkt_residual(inst))
    out = [SuiteResult(f"qclp-{k}", counts[k], worst[k], 1e-6) for k in worst]
    out.append(SuiteResult("kkt-sg", n, kkt, 1e-8))
    return out


def bounds_suite(n: int, rng) -> list[SuiteResult]:
    """Largest violation of bound <= log_prob, and the N=1 collapse error."""
    viol = collapse = 0.0
    for _ in range(n):
        inst = random_instance(rng, spread=2.0)
        m = inst.mixture
        a = m.means[rng.integers(m.n_components)] + 2.0 * np.sqrt(m.vars[0]) * rng.standard_normal(m.dim)
        lp = log_prob(m, a)
        viol = max(viol, lse_lower_bound(m, a) - lp, jensen_lower_bound(m, a) - lp)
        one = GaussianMixture(np.ones(1), m.means[:1], m.vars[:1])
        lp1 = log_prob(one, a)
        collapse = max(collapse, abs(lse_lower_bound(one, a) - lp1), abs(jensen_lower_bound(one, a) - lp1))
    return [SuiteResult("bound-dominance", n, max(viol, 0.0), 1e-12), SuiteResult("bound-collapse", n, collapse, 1e-10)]


def reduction_suite(n: int, rng) -> list[SuiteResult]:
    worst = 0.0
    for _ in range(n):
        inst = random_instance(rng)
        comp = inst.mixture.components[0]
        one = GaussianMixture(np.ones(1), comp.mean[None], comp.var[None])
        g = ActionGradient(inst.grads[0], comp.mean)
        sg = improve_sg(comp, g, inst.log_tau)
        lse = improve_lse(one, [g], inst.log_tau).action
        jen = improve_jensen(one, g, inst.log_tau).action
        worst = max(worst, np.max(np.abs(lse - sg)), np.max(np.abs(jen - sg)))
    return [SuiteResult("reduction-chain", n, float(worst), 1e-10)]


def chain_suite() -> list[SuiteResult]:
    """Chain environment vs its exact oracle: transitions and expected reward."""
    env = ChainMdp()
    rng = np.random.default_rng(7)
    idx = np.arange(env.n_states)
    s2, _, _ = env.step(env.encode(idx), np.zeros((env.n_states, 1)), rng)
    p = env.transition_matrix()
    table = float(np.max(np.abs(s2 - p[idx])))
    n = 200_000
    draws = env.behavior_policy()(env.encode(np.repeat(idx, n)), rng)
    r = env.reward_index(np.repeat(idx, n), env.clip(draws)).reshape(env.n_states, n)
    se = r.std(axis=1) / np.sqrt(n)
    z = float(np.max(np.abs(r.mean(axis=1) - env.expected_behavior_reward()) / se))
    return [SuiteResult("chain-transitions", env.n_states, table, 0.0), SuiteResult("chain-reward-z", n, z, 5.0)]


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale < 1e-10 else float(np.linalg.norm(a - b) / scale)


def _forward_with_pattern(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, bytes]:
    """Network output plus the ReLU on/off pattern of every hidden unit."""
    h, signs = x, []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.data + b.data
        if i < last:
            signs.append(h > 0)
            h = np.maximum(h, 0.0)
    return h, np.concatenate([s.ravel() for s in signs]).tobytes() if signs else b""


def gradient_errors(rng, h: float = 1e-5, coords: int = 64) -> tuple[float, float]:
    """Worst relative error of parameter and input gradients against central differences.

    Random ReLU net (depth <= 3, widths <= 64) with loss sum(c * net(x)).
    Parameters are checked on a random coordinate subset of every tensor and
    along one random direction through all of them; inputs are checked fully.
    A central difference whose +-h points sit on different ReLU patterns
    straddles a kink and is no oracle there, so such coordinates are skipped.
    """
    depth = int(rng.integers(1, 4))
    widths = [int(rng.integers(1, 9))] + [int(rng.integers(1, 65)) for _ in range(depth - 1)] + [int(rng.integers(1, 5))]
    net = Mlp(widths, rng)
    x = rng.standard_normal((4, widths[0]))
    c = rng.standard_normal((4, widths[-1]))

    def probe(xx=x):
        out, pattern = _forward_with_pattern(net, xx)
        return float(np.sum(c * out)), pattern

    _, base = probe()

    def central(up, down):
        (fu, pu), (fd, pd) = up, down
        return (fu - fd) / (2 * h) if pu == base and pd == base else None

    xt = ad.Tensor(x, requires_grad=True)
    net.zero_grad()
    ad.backward(ad.tsum(net(xt) * c))
    param_err = 0.0
    for p in net.parameters:
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
        kept, fd = [], []
        for j in picks:
            old = flat[j]
            flat[j] = old + h
            up = probe()
            flat[j] = old - h
            down = probe()
            flat[j] = old
            value = central(up, down)
            if value is not None:
                kept.append(j)
                fd.append(value)
        if kept:
            param_err = max(param_err, _rel(p.grad.reshape(-1)[kept], np.array(fd)))
    base_params = [p.data.copy() for p in net.parameters]
    for _ in range(10):
        direction = [rng.standard_normal(p.shape) for p in net.parameters]
        for p, b0, v in zip(net.parameters, base_params, direction):
            p.data = b0 + h * v
        up = probe()
        for p, b0, v in zip(net.parameters, base_params, direction):
            p.data = b0 - h * v
        down = probe()
        for p, b0 in zip(net.parameters, base_params):
            p.data = b0
        value = central(up, down)
        if value is not None:
            analytic = sum(float(np.sum(p.grad * v)) for p, v in zip(net.parameters, direction))
            param_err = max(param_err, _rel(np.array([analytic]), np.array([value])))
            break
    kept, fd_x = [], []
    for idx in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        value = central(probe(xp), probe(xm))
        if value is not None:
            kept.append(idx)
            fd_x.append(value)
    input_err = _rel(np.array([xt.grad[i] for i in kept]), np.array(fd_x)) if kept else 0.0
    return param_err, input_err


def gradient_suite(n: int, rng) -> list[SuiteResult]:
    errs = np.array([gradient_errors(rng) for _ in range(n)])
    return [SuiteResult("grad-params", n, float(errs[:, 0].max()), 1e-4), SuiteResult("grad-inputs", n, float(errs[:, 1].max()), 1e-4)]


def run_all(n: int, seed: int, nets: int = 100) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    return qclp_suite(n, rng) + bounds_suite(n, rng) + reduction_suite(n, rng) + chain_suite() + gradient_suite(nets, rng)

