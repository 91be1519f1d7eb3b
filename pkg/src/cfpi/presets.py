"""Per-environment desk-scale defaults and JSON config overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
import json
from pathlib import Path

from .algos import IterativeConfig, OneStepConfig
from .bc import BcConfig
from .critics import CriticConfig

EPISODES = {"quad-bandit-v0": 4000, "chain-v0": 400, "pointmass-bimodal-v0": 200, "pointmass-overlap-v0": 200}


def one_step_config(env_name: str, **overrides) -> OneStepConfig:
    if env_name == "chain-v0":
        critic = CriticConfig(gamma=0.5, huber_kappa=0.05, lr=1e-3, lr_final=3e-5, steps=8000)
        bc = BcConfig(steps=2000)
    elif env_name.startswith("pointmass"):
        critic = CriticConfig(gamma=0.9, lr=1e-3, lr_final=3e-5, steps=4000)
        bc = BcConfig(steps=3000)
    else:
        critic = CriticConfig(gamma=0.0, huber_kappa=0.05, steps=3000, lr_final=3e-5)
        bc = BcConfig(steps=2000)
    cfg = OneStepConfig(bc=bc, critic=critic)
    return apply_overrides(cfg, overrides)


def iterative_config(env_name: str, **overrides) -> IterativeConfig:
    if env_name == "chain-v0":
        cfg = IterativeConfig(steps=3000, gamma=0.5, lr=1e-3)
    elif env_name.startswith("pointmass"):
        cfg = IterativeConfig(steps=3000, gamma=0.9)
    else:
        cfg = IterativeConfig(steps=2000, gamma=0.0)
    return apply_overrides(cfg, overrides)


def apply_overrides(cfg, overrides: dict):
    """Recursively replace dataclass fields from a plain dict; unknown keys are errors."""
    changes = {}
    names = {f.name: f for f in dataclasses.fields(cfg)}
    for key, value in overrides.items():
        if key not in names:
            raise KeyError(f"unknown config key {key!r} for {type(cfg).__name__}")
        current = getattr(cfg, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            changes[key] = apply_overrides(current, value)
        elif isinstance(current, tuple) and isinstance(value, list):
            changes[key] = tuple(value)
        else:
            changes[key] = value
    return dataclasses.replace(cfg, **changes)


def load_overrides(path) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return doc


def to_dict(cfg) -> dict:
    out = dataclasses.asdict(cfg)
    for k, v in out.items():
        if hasattr(v, "value"):
            out[k] = v.value
    return out


@dataclass
class ValidationConfig:
    """Settings for the held-out critic loss curve."""

    split_ratio: float = 0.95
    checkpoints: tuple[int, ...] = (250, 500, 1000, 2000, 4000)
    reference_steps: int = 4000
    critic: CriticConfig = field(default_factory=CriticConfig)


def validation_config(env_name: str, **overrides) -> ValidationConfig:
    critic = one_step_config(env_name).critic
    return apply_overrides(ValidationConfig(critic=critic), overrides)
