"""Independent numerical solvers for the trust-region problems.

These never call the closed forms in ``operators``. Each maximizes a linear
objective g^T mu under one quadratic constraint by bisecting the Lagrange
multiplier eta of the stationarity condition until the constraint binds,
evaluating the constraint from the raw per-component quadratic forms.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def _bisect_eta(constraint_at, budget: float, iters: int = 200) -> float:
    """Find eta > 0 with constraint_at(eta) == budget; constraint_at is decreasing in eta."""
    lo, hi = 1e-300, 1.0
    while constraint_at(hi) > budget:
        hi *= 4.0
    lo = hi / 4.0
    while constraint_at(lo) < budget and lo > 1e-300:
        lo /= 4.0
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        if constraint_at(mid) > budget:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 < 1e-15:
            break
    return math.sqrt(lo * hi)


def solve_gaussian_qclp(mean, var, g, delta):
    """max g^T mu  s.t.  -log N(mu; mean, diag(var)) <= delta.

    Returns (mu, objective) or (None, -inf) when the feasible set is empty.
    """
    mean, var, g = (np.asarray(x, dtype=np.float64) for x in (mean, var, g))
    budget = delta - 0.5 * float(np.sum(LOG_2PI + np.log(var)))
    if budget < 0:
        return None, -math.inf
    if budget == 0 or not np.any(g):
        return mean.copy(), float(g @ mean)

    def constraint(eta):
        step = var * g / eta
        return 0.5 * float(np.sum(step * step / var))

    eta = _bisect_eta(constraint, budget)
    mu = mean + var * g / eta
    return mu, float(g @ mu)


def solve_lse_problem(weights, means, vars_, grads, delta):
    """LogSumExp-relaxed problem: best of the per-component subproblems.

    Component i may host the solution only if log lambda_i - 1/2 log det(2 pi Sigma_i) >= -delta;
    each subproblem is linearized at its own component mean with gradient grads[i].
    Returns (mu, objective, index).
    """
    best = (None, -math.inf, -1)
    for i, (w, m, v, g) in enumerate(zip(weights, means, vars_, grads)):
        if w <= 0:
            continue
        mu, obj = solve_gaussian_qclp(m, v, g, delta + math.log(w))
        if mu is not None and obj > best[1]:
            best = (mu, obj, i)
    return best


def jensen_constraint(weights, means, vars_, mu) -> float:
    """-sum_i lambda_i log N(mu; mu_i, Sigma_i)."""
    total = 0.0
    for w, m, v in zip(weights, means, vars_):
        diff = mu - m
        total += w * 0.5 * (float(np.sum(LOG_2PI + np.log(v))) + float(np.sum(diff * diff / v)))
    return total


def solve_jensen_problem(weights, means, vars_, g, delta):
    """max g^T mu  s.t.  -sum_i lambda_i log N(mu; mu_i, Sigma_i) <= delta.

    Returns (mu, objective); (None, -inf) if even the constraint's minimizer is infeasible.
    """
    weights = np.asarray(weights, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    vars_ = np.asarray(vars_, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    precision = sum(w / v for w, v in zip(weights, vars_))
    linear = sum(w * m / v for w, m, v in zip(weights, means, vars_))

    def stationary(eta):
        # sum_i lambda_i Sigma_i^-1 (mu - mu_i) = g / eta
        return (linear + g / eta) / precision

    center = linear / precision
    lowest = jensen_constraint(weights, means, vars_, center)
    if lowest > delta:
        return None, -math.inf
    if lowest == delta or not np.any(g):
        return center, float(g @ center)
    eta = _bisect_eta(lambda e: jensen_constraint(weights, means, vars_, stationary(e)), delta)
    mu = stationary(eta)
    return mu, float(g @ mu)


def solve_ball_problem(mu_b, g, delta):
    """max g^T mu  s.t.  1/2 ||mu - mu_b||^2 <= delta."""
    mu_b = np.asarray(mu_b, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if delta == 0 or not np.any(g):
        return mu_b.copy(), float(g @ mu_b)
    eta = _bisect_eta(lambda e: 0.5 * float(np.sum((g / e) ** 2)), delta)
    mu = mu_b + g / eta
    return mu, float(g @ mu)
