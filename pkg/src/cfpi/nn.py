"""ReLU multilayer perceptrons, Adam, and flat binary checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, DimensionError

CKPT_MAGIC = b"MLP1"
ACTIVATIONS = {"relu": 0}


class Mlp:
    """Fully connected net; ReLU between layers, linear output.

    Weights use scaled uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    """

    def __init__(self, widths: list[int], rng: np.random.Generator | None = None, activation: str = "relu"):
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError(f"bad layer widths {widths}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {activation!r}")
        self.widths = [int(w) for w in widths]
        self.activation = activation
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            if rng is None:
                w = np.zeros((fan_in, fan_out))
                b = np.zeros(fan_out)
            else:
                w = rng.uniform(-bound, bound, (fan_in, fan_out))
                b = rng.uniform(-bound, bound, fan_out)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(b, requires_grad=True))

    @property
    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def __call__(self, x) -> Tensor:
        return forward(self, x)

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.zero_grad()

    def copy(self) -> Mlp:
        net = Mlp(self.widths, None, self.activation)
        net.load_flat(self.flat())
        return net

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters])

    def load_flat(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.size != sum(p.size for p in self.parameters):
            raise DimensionError("flat parameter vector has the wrong length")
        i = 0
        for p in self.parameters:
            p.data = values[i : i + p.size].reshape(p.shape).copy()
            i += p.size

    def numpy_forward(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without recording a tape."""
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i < last:
                h = np.maximum(h, 0.0)
        return h


def forward(net: Mlp, x) -> Tensor:
    x = ad.as_tensor(x)
    if x.shape[-1] != net.in_dim:
        raise DimensionError(f"input width {x.shape[-1]} != network input {net.in_dim}")
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = ad.relu(h)
    return h


def input_gradient(head, x: np.ndarray, cols: slice | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Values and d head(x) / dx for a scalar-per-row head.

    ``head`` maps an input Tensor (B, n) to a Tensor (B,) or (B, 1). Rows are
    independent, so the gradient of the summed output gives every row's own
    gradient. ``cols`` restricts the returned gradient to the action slice.
    """
    xt = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    out = head(xt)
    if out.ndim == 2 and out.shape[1] != 1:
        raise DimensionError("input_gradient needs a scalar output head")
    (g,) = ad.grad(out, [xt])
    values = out.data.reshape(-1)
    return values, (g if cols is None else g[:, cols])


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState) -> AdamState:
    """In-place bias-corrected Adam update; missing grads count as zero."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, **kw):
        self.params = params
        self.state = AdamState(lr=lr, **kw)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)


def polyak_update(target: Mlp, online: Mlp, rate: float) -> None:
    """target <- (1 - rate) target + rate online."""
    for t, o in zip(target.parameters, online.parameters):
        t.data = (1.0 - rate) * t.data + rate * o.data


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(net: Mlp, path, **metadata) -> None:
    path = Path(path)
    header = CKPT_MAGIC + struct.pack("<IB", len(net.widths), ACTIVATIONS[net.activation])
    header += struct.pack(f"<{len(net.widths)}I", *net.widths)
    path.write_bytes(header + net.flat().astype("<f8").tobytes())
    sidecar = {"widths": net.widths, "activation": net.activation, **metadata}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def load_checkpoint(path) -> tuple[Mlp, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise DataError(f"{path} is not a network checkpoint")
    n, act_code = struct.unpack_from("<IB", raw, 4)
    widths = list(struct.unpack_from(f"<{n}I", raw, 9))
    activation = {v: k for k, v in ACTIVATIONS.items()}[act_code]
    net = Mlp(widths, None, activation)
    body = raw[9 + 4 * n :]
    expected = sum(p.size for p in net.parameters) * 8
    if len(body) != expected:
        raise DataError(f"{path}: expected {expected} parameter bytes, found {len(body)}")
    net.load_flat(np.frombuffer(body, dtype="<f8"))
    meta_path = path.with_suffix(path.suffix + ".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return net, meta
