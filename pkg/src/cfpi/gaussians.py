"""Diagonal Gaussian and Gaussian-mixture action distributions.

All covariance algebra is elementwise on the diagonal. Mixture densities are
always assembled from per-component log-densities; raw densities are never
formed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateFilterError, DimensionError

VAR_FLOOR = 1e-8
LOG_2PI = float(np.log(2.0 * np.pi))
WEIGHT_TOL = 1e-12


def _frozen(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class DiagGaussian:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        var = np.atleast_1d(np.asarray(self.var, dtype=np.float64))
        if mean.ndim != 1 or mean.shape != var.shape:
            raise DimensionError(f"mean {mean.shape} and var {var.shape} must be equal-length vectors")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))) or np.any(var <= 0):
            raise DataError("variances must be positive and all entries finite")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "var", _frozen(np.maximum(var, VAR_FLOOR)))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_det_2pi(self) -> float:
        """log det(2 pi Sigma)."""
        return float(np.sum(LOG_2PI + np.log(self.var)))

    def as_mixture(self) -> GaussianMixture:
        return GaussianMixture(np.ones(1), self.mean[None], self.var[None])


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Mixture with weights (N,), means (N, d) and diagonal variances (N, d)."""

    weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        mu = np.asarray(self.means, dtype=np.float64)
        var = np.asarray(self.vars, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None]
        if var.ndim == 1:
            var = var[:, None]
        if w.ndim != 1 or w.shape[0] < 1:
            raise DimensionError("weights must be a non-empty vector")
        if mu.shape != var.shape or mu.shape[0] != w.shape[0]:
            raise DimensionError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}, vars {var.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise DataError(f"weights must be a probability vector (sum={w.sum()!r})")
        if np.any(var <= 0) or not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise DataError("variances must be positive and all entries finite")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "means", _frozen(mu))
        object.__setattr__(self, "vars", _frozen(np.maximum(var, VAR_FLOOR)))

    @classmethod
    def from_components(cls, weights, components: list[DiagGaussian]) -> GaussianMixture:
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise DimensionError("all components must share one dimension")
        return cls(weights, np.stack([c.mean for c in components]), np.stack([c.var for c in components]))

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[DiagGaussian]:
        return [DiagGaussian(m, v) for m, v in zip(self.means, self.vars)]

    def log_det_2pi(self) -> np.ndarray:
        """Per-component log det(2 pi Sigma_i), shape (N,)."""
        return np.sum(LOG_2PI + np.log(self.vars), axis=-1)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means


@dataclass(frozen=True, eq=False)
class PseudoGaussian:
    mean: np.ndarray
    var: np.ndarray


def _as_mixture(model) -> GaussianMixture:
    if isinstance(model, DiagGaussian):
        return model.as_mixture()
    if isinstance(model, GaussianMixture):
        return model
    raise TypeError(f"expected DiagGaussian or GaussianMixture, got {type(model).__name__}")


def _check_point(model: GaussianMixture, a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        a = a[None]
    if a.shape[-1] != model.dim:
        raise DimensionError(f"action has dimension {a.shape[-1]}, model has {model.dim}")
    return a


def component_log_probs(model, a) -> np.ndarray:
    """log N(a; mu_i, Sigma_i) for every component; shape (..., N)."""
    m = _as_mixture(model)
    a = _check_point(m, a)
    diff = a[..., None, :] - m.means
    quad = np.sum(diff * diff / m.vars, axis=-1)
    return -0.5 * (quad + m.log_det_2pi())


def logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    xmax = np.max(x, axis=axis, keepdims=True)
    xmax = np.where(np.isfinite(xmax), xmax, 0.0)
    out = np.log(np.sum(np.exp(x - xmax), axis=axis)) + np.squeeze(xmax, axis=axis)
    return out


def log_prob(model, a):
    """Exact log-density; ``a`` may carry leading batch dimensions."""
    m = _as_mixture(model)
    with np.errstate(divide="ignore"):
        logw = np.log(m.weights)
    out = logsumexp(component_log_probs(m, a) + logw, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def lse_lower_bound(model: GaussianMixture, a):
    """max_i [log lambda_i + log N(a; mu_i, Sigma_i)]."""
    m = _as_mixture(model)
    with np.errstate(divide="ignore"):
        terms = component_log_probs(m, a) + np.log(m.weights)
    out = np.max(terms, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def jensen_lower_bound(model: GaussianMixture, a):
    """sum_i lambda_i log N(a; mu_i, Sigma_i)."""
    m = _as_mixture(model)
    out = component_log_probs(m, a) @ m.weights
    return float(out) if np.ndim(out) == 0 else out


def pseudo_gaussian(model: GaussianMixture) -> PseudoGaussian:
    m = _as_mixture(model)
    precision = m.weights @ (1.0 / m.vars)
    var = 1.0 / precision
    mean = var * (m.weights @ (m.means / m.vars))
    return PseudoGaussian(_frozen(mean), _frozen(var))


def sample(model, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    m = _as_mixture(model)
    n = 1 if size is None else size
    idx = rng.choice(m.n_components, size=n, p=m.weights) if m.n_components > 1 else np.zeros(n, dtype=int)
    draws = m.means[idx] + np.sqrt(m.vars[idx]) * rng.standard_normal((n, m.dim))
    return draws[0] if size is None else draws


def nontrivial_components(model: GaussianMixture, xi: float) -> list[tuple[int, DiagGaussian]]:
    if not 0.0 <= xi < 1.0:
        raise ValueError(f"threshold must lie in [0, 1), got {xi}")
    m = _as_mixture(model)
    kept = [(i, c) for i, c in enumerate(m.components) if m.weights[i] > xi]
    if not kept:
        raise DegenerateFilterError(f"no component weight exceeds {xi}")
    return kept


def to_json(model) -> str:
    m = _as_mixture(model)
    doc = {
        "d": m.dim,
        "N": m.n_components,
        "weights": m.weights.tolist(),
        "means": m.means.tolist(),
        "vars": m.vars.tolist(),
    }
    return json.dumps(doc)


def from_json(text: str) -> GaussianMixture:
    doc = json.loads(text)
    try:
        m = GaussianMixture(doc["weights"], doc["means"], doc["vars"])
    except KeyError as exc:
        raise DataError(f"missing field {exc}") from None
    if m.dim != doc["d"] or m.n_components != doc["N"]:
        raise DimensionError("declared d/N disagree with array shapes")
    return m


@dataclass(frozen=True, eq=False)
class MixtureBatch:
    """A stack of B state-conditioned mixtures sharing N and d.

    weights (B, N), means (B, N, d), vars (B, N, d).
    """

    weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vars", np.maximum(np.asarray(self.vars, dtype=np.float64), VAR_FLOOR))

    def __len__(self) -> int:
        return self.weights.shape[0]

    def __getitem__(self, i: int) -> GaussianMixture:
        w = self.weights[i]
        return GaussianMixture(w / w.sum(), self.means[i], self.vars[i])

    @property
    def n_components(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    @classmethod
    def stack(cls, models) -> MixtureBatch:
        ms = [_as_mixture(m) for m in models]
        return cls(np.stack([m.weights for m in ms]), np.stack([m.means for m in ms]), np.stack([m.vars for m in ms]))

    def log_det_2pi(self) -> np.ndarray:
        return np.sum(LOG_2PI + np.log(self.vars), axis=-1)

    def mean(self) -> np.ndarray:
        return np.einsum("bn,bnd->bd", self.weights, self.means)

    def pseudo(self) -> tuple[np.ndarray, np.ndarray]:
        precision = np.einsum("bn,bnd->bd", self.weights, 1.0 / self.vars)
        var = 1.0 / precision
        mean = var * np.einsum("bn,bnd->bd", self.weights, self.means / self.vars)
        return mean, var

    def sample(self, rng: np.random.Generator, m: int = 1) -> np.ndarray:
        """Draw m actions per row; returns (B, m, d)."""
        b, _, d = self.means.shape
        return self.sample_from_noise(rng.random((b, m)), rng.standard_normal((b, m, d)))

    def sample_from_noise(self, u: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Inverse-CDF component pick from uniforms u (B, m), then mean + sd * z (B, m, d)."""
        n = self.n_components
        cum = np.cumsum(self.weights, axis=1)
        idx = np.minimum((u[:, :, None] * cum[:, None, -1:] > cum[:, None, :]).sum(-1), n - 1)
        rows = np.arange(len(self))[:, None]
        return self.means[rows, idx] + np.sqrt(self.vars[rows, idx]) * z
