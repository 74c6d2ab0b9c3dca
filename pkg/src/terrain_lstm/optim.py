"""Adam with per-tensor first/second moment estimates and bias correction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: Optional[float] = None  # global L2 gradient clipping, off by default

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractViolation(f"learning rate must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractViolation("Adam betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ContractViolation("Adam epsilon must be > 0")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ContractViolation("clip_norm must be > 0 when set")


@dataclass(frozen=True)
class AdamState:
    m: dict
    v: dict
    t: int = 0


def adam_init(params: dict) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(w) for k, w in params.items()},
        v={k: np.zeros_like(w) for k, w in params.items()},
        t=0,
    )


def adam_step(state: AdamState, params: dict, grads: dict, cfg: AdamConfig):
    """One Adam update. Pure: returns ``(new_params, new_state)``."""
    if set(params) != set(state.m) or set(params) != set(grads):
        raise ContractViolation(
            f"parameter keys {sorted(params)} do not match state {sorted(state.m)} / grads {sorted(grads)}"
        )
    for k in params:
        if np.shape(grads[k]) != np.shape(params[k]) or np.shape(state.m[k]) != np.shape(params[k]):
            raise ContractViolation(
                f"shape mismatch for {k}: param {np.shape(params[k])}, grad {np.shape(grads[k])}"
            )
    if cfg.clip_norm is not None:
        norm = np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
        if norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm
            grads = {k: g * scale for k, g in grads.items()}

    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for k, w in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        new_params[k] = w - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(new_m, new_v, t)
