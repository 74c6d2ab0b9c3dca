"""Regularized training losses.

Both stages share an elastic-net penalty over a layer's trainable tensors:

    penalty = lam * (gamma * sum|w| + (1 - gamma) * sum w**2)

The next-step predictor adds it to a per-frame mean squared error, the terrain
classifier to a clamped cross entropy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ContractViolation
from .seqcore import DTYPE

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class RegularizationSpec:
    lam: float = 1e-4
    gamma: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ContractViolation(f"lambda must be finite and >= 0, got {self.lam}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractViolation(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class LossValue:
    data_term: float
    penalty_term: float
    total: float

    @classmethod
    def of(cls, data_term: float, penalty_term: float) -> "LossValue":
        return cls(float(data_term), float(penalty_term), float(data_term) + float(penalty_term))


def _tensors(params):
    if params is None:
        return []
    if hasattr(params, "tensors"):
        params = params.tensors()
    if isinstance(params, Mapping):
        return list(params.values())
    if isinstance(params, np.ndarray):
        return [params]
    return [np.asarray(p, dtype=DTYPE) for p in params]


def elastic_net_penalty(params, reg: RegularizationSpec) -> float:
    """Elastic-net penalty summed over every tensor in ``params``.

    ``params`` may be an ``LstmParams``, a name -> array mapping, or a
    sequence of arrays.
    """
    if reg.lam == 0:
        return 0.0
    l1 = 0.0
    l2 = 0.0
    for w in _tensors(params):
        l1 += float(np.abs(w).sum())
        l2 += float(np.square(w).sum())
    return reg.lam * (reg.gamma * l1 + (1.0 - reg.gamma) * l2)


def penalty_gradient_array(w: np.ndarray, reg: RegularizationSpec) -> np.ndarray:
    # np.sign(0) == 0 is the subgradient used at the kink
    return reg.lam * (reg.gamma * np.sign(w) + (1.0 - reg.gamma) * 2.0 * w)


def penalty_gradient(params, reg: RegularizationSpec):
    """Gradient of :func:`elastic_net_penalty`, shaped like ``params``.

    Returns a dict when given a mapping or ``LstmParams``, otherwise a list.
    """
    if hasattr(params, "tensors"):
        params = params.tensors()
    if isinstance(params, Mapping):
        return {k: penalty_gradient_array(np.asarray(w, dtype=DTYPE), reg) for k, w in params.items()}
    return [penalty_gradient_array(w, reg) for w in _tensors(params)]


def squared_error_term(x, x_hat) -> float:
    """Mean over frames of the per-frame MSE. Accepts one frame or a (T, d) block."""
    x = np.asarray(x, dtype=DTYPE)
    x_hat = np.asarray(x_hat, dtype=DTYPE)
    if x.shape != x_hat.shape:
        raise ContractViolation(f"target shape {x.shape} does not match prediction shape {x_hat.shape}")
    if x.size == 0:
        raise ContractViolation("empty prediction target")
    return float(np.mean(np.square(x - x_hat)))


def predicting_loss(x, x_hat, params=None, reg: RegularizationSpec | None = None) -> LossValue:
    """Next-step prediction loss: MSE over the frame dimension plus the penalty.

    For a block of frames the data term averages over every predicted frame;
    the penalty is added once.
    """
    data = squared_error_term(x, x_hat)
    pen = elastic_net_penalty(params, reg) if reg is not None else 0.0
    return LossValue.of(data, pen)


def _check_one_hot(y: np.ndarray):
    ok = np.all((y == 0.0) | (y == 1.0), axis=-1) & (y.sum(axis=-1) == 1.0)
    if not np.all(ok):
        raise ContractViolation("class target is not one-hot")


def cross_entropy_term(y, y_hat) -> float:
    """Clamped cross entropy, averaged over time steps when given (T, C) blocks."""
    y = np.asarray(y, dtype=DTYPE)
    y_hat = np.asarray(y_hat, dtype=DTYPE)
    if y.shape != y_hat.shape:
        raise ContractViolation(f"one-hot shape {y.shape} does not match distribution shape {y_hat.shape}")
    if y.size == 0:
        raise ContractViolation("empty class target")
    _check_one_hot(y)
    per_step = -np.sum(y * np.log(np.maximum(y_hat, PROB_CLAMP)), axis=-1)
    return float(np.mean(per_step))


def classifying_loss(y, y_hat, params=None, reg: RegularizationSpec | None = None) -> LossValue:
    """Cross entropy against a one-hot terrain target plus the penalty."""
    data = cross_entropy_term(y, y_hat)
    pen = elastic_net_penalty(params, reg) if reg is not None else 0.0
    return LossValue.of(data, pen)


def one_hot(label: int, n_classes: int) -> np.ndarray:
    if not 0 <= label < n_classes:
        raise ContractViolation(f"label {label} outside [0, {n_classes})")
    y = np.zeros(n_classes, dtype=DTYPE)
    y[label] = 1.0
    return y
