"""LSTM layer, output heads and backpropagation through time.

Gate blocks are stored in the fixed order [input | forget | cell | output] in
``W`` (4h x d), ``U`` (4h x h) and ``B`` (4h). Every sequence starts from a
zero hidden and cell state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractViolation
from .objective import (
    LossValue,
    PROB_CLAMP,
    RegularizationSpec,
    elastic_net_penalty,
    penalty_gradient_array,
)
from .seqcore import DTYPE, SeededRng, sigmoid, softmax

GATE_ORDER = "ifgo"


@dataclass
class LstmParams:
    W: np.ndarray
    U: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=DTYPE)
        self.U = np.asarray(self.U, dtype=DTYPE)
        self.B = np.asarray(self.B, dtype=DTYPE)
        h4, d = self.W.shape
        if h4 % 4:
            raise ContractViolation(f"W must have 4h rows, got {h4}")
        h = h4 // 4
        if self.U.shape != (4 * h, h) or self.B.shape != (4 * h,):
            raise ContractViolation(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} B{self.B.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmParams":
        h = hidden_size
        return cls(np.zeros((4 * h, input_size)), np.zeros((4 * h, h)), np.zeros(4 * h))

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: SeededRng) -> "LstmParams":
        """Glorot-style uniform weights, zero biases except forget-gate biases of 1."""
        d, h = input_size, hidden_size
        bw = np.sqrt(6.0 / (d + h))
        bu = np.sqrt(6.0 / (h + h))
        W = rng.uniform(-bw, bw, (4 * h, d))
        U = rng.uniform(-bu, bu, (4 * h, h))
        B = np.zeros(4 * h)
        B[h:2 * h] = 1.0
        return cls(W, U, B)

    def tensors(self) -> dict:
        return {"W": self.W, "U": self.U, "B": self.B}

    def copy(self) -> "LstmParams":
        return LstmParams(self.W.copy(), self.U.copy(), self.B.copy())


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmState":
        return cls(np.zeros(hidden_size), np.zeros(hidden_size))


@dataclass
class Head:
    """Affine read-out ``V h + c`` from the hidden state."""

    V: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=DTYPE)
        self.c = np.asarray(self.c, dtype=DTYPE)
        if self.V.ndim != 2 or self.c.shape != (self.V.shape[0],):
            raise ContractViolation(f"inconsistent head shapes V{self.V.shape} c{self.c.shape}")

    @property
    def out_size(self) -> int:
        return self.V.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.V.shape[1]

    @classmethod
    def zeros(cls, out_size: int, hidden_size: int):
        return cls(np.zeros((out_size, hidden_size)), np.zeros(out_size))

    @classmethod
    def init(cls, out_size: int, hidden_size: int, rng: SeededRng):
        bound = np.sqrt(6.0 / (out_size + hidden_size))
        return cls(rng.uniform(-bound, bound, (out_size, hidden_size)), np.zeros(out_size))

    def tensors(self) -> dict:
        return {"V": self.V, "c": self.c}

    def copy(self):
        return type(self)(self.V.copy(), self.c.copy())

    def logits(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=DTYPE)
        if h.shape[-1] != self.hidden_size:
            raise ContractViolation(
                f"head expects hidden size {self.hidden_size}, got {h.shape[-1]}"
            )
        return h @ self.V.T + self.c


class PredictionHead(Head):
    """Linear next-frame predictor (d x h)."""


class ClassificationHead(Head):
    """Softmax terrain classifier (C x h)."""


def apply_prediction_head(head: PredictionHead, h) -> np.ndarray:
    return head.logits(h)


def apply_classification_head(head: ClassificationHead, h) -> np.ndarray:
    return softmax(head.logits(h))


@dataclass
class DropoutSpec:
    rate: float = 0.0
    training: bool = False
    rng: Optional[SeededRng] = None

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ContractViolation(f"dropout rate must lie in [0, 1), got {self.rate}")
        if self.active and self.rng is None:
            raise ContractViolation("training-mode dropout needs an rng")

    @property
    def active(self) -> bool:
        return self.training and self.rate > 0.0

    def mask(self, shape) -> Optional[np.ndarray]:
        """Inverted-dropout mask, or None when dropout is inactive."""
        if not self.active:
            return None
        keep = self.rng.random(shape) >= self.rate
        return keep / (1.0 - self.rate)


EVAL = DropoutSpec()


def lstm_step(p: LstmParams, x, s: LstmState) -> LstmState:
    x = np.asarray(x, dtype=DTYPE)
    h = p.hidden_size
    if x.shape != (p.input_size,):
        raise ContractViolation(f"input has length {x.shape}, layer expects {p.input_size}")
    if s.h.shape != (h,) or s.c.shape != (h,):
        raise ContractViolation(f"state does not match hidden size {h}")
    z = p.W @ x + p.U @ s.h + p.B
    i = sigmoid(z[:h])
    f = sigmoid(z[h:2 * h])
    g = np.tanh(z[2 * h:3 * h])
    o = sigmoid(z[3 * h:])
    c = f * s.c + i * g
    return LstmState(o * np.tanh(c), c)


@dataclass
class ForwardCache:
    xs: np.ndarray  # (T, d)
    gates: np.ndarray  # (T, 4h) post-activation, [i|f|g|o]
    cs: np.ndarray  # (T, h)
    tanh_cs: np.ndarray  # (T, h)
    hs: np.ndarray  # (T, h) before dropout
    mask: Optional[np.ndarray] = None  # (T, h) or None

    @property
    def outputs(self) -> np.ndarray:
        """Layer outputs with the dropout mask applied."""
        return self.hs if self.mask is None else self.hs * self.mask

    @property
    def states(self) -> list:
        return [LstmState(h, c) for h, c in zip(self.hs, self.cs)]


def lstm_forward(p: LstmParams, xs, dropout: DropoutSpec = EVAL) -> ForwardCache:
    """Run the layer over a full sequence from a zero initial state."""
    xs = np.asarray(xs, dtype=DTYPE)
    if xs.ndim != 2 or xs.shape[0] < 1:
        raise ContractViolation("lstm_forward needs a non-empty (T, d) sequence")
    if xs.shape[1] != p.input_size:
        raise ContractViolation(f"frames have width {xs.shape[1]}, layer expects {p.input_size}")
    T = xs.shape[0]
    h = p.hidden_size
    pre_in = xs @ p.W.T + p.B
    U = p.U
    gates = np.empty((T, 4 * h))
    cs = np.empty((T, h))
    tcs = np.empty((T, h))
    hs = np.empty((T, h))
    h_prev = np.zeros(h)
    c_prev = np.zeros(h)
    with np.errstate(over="ignore"):  # exp(+big) -> inf -> sigmoid 0 is exact enough
        for t in range(T):
            z = pre_in[t] + U @ h_prev
            a = gates[t]
            a[:2 * h] = 1.0 / (1.0 + np.exp(-z[:2 * h]))
            a[2 * h:3 * h] = np.tanh(z[2 * h:3 * h])
            a[3 * h:] = 1.0 / (1.0 + np.exp(-z[3 * h:]))
            c_prev = a[h:2 * h] * c_prev + a[:h] * a[2 * h:3 * h]
            tc = np.tanh(c_prev)
            h_prev = a[3 * h:] * tc
            cs[t] = c_prev
            tcs[t] = tc
            hs[t] = h_prev
    return ForwardCache(xs, gates, cs, tcs, hs, dropout.mask((T, h)))


def lstm_backward(p: LstmParams, cache: ForwardCache, d_out: np.ndarray, need_dx: bool = False):
    """Backpropagate ``dL/d(outputs)`` through the layer.

    Returns ``({"W", "U", "B"} gradients, dL/dxs or None)``.
    """
    h = p.hidden_size
    T = cache.hs.shape[0]
    dh_ext = d_out if cache.mask is None else d_out * cache.mask
    a = cache.gates
    i, f, g, o = a[:, :h], a[:, h:2 * h], a[:, 2 * h:3 * h], a[:, 3 * h:]
    tcs = cache.tanh_cs
    dz = np.empty((T, 4 * h))
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    UT = p.U.T
    for t in range(T - 1, -1, -1):
        dh = dh_ext[t] + dh_next
        dc = dc_next + dh * o[t] * (1.0 - tcs[t] * tcs[t])
        c_prev = cache.cs[t - 1] if t > 0 else 0.0
        row = dz[t]
        row[:h] = dc * g[t] * i[t] * (1.0 - i[t])
        row[h:2 * h] = dc * c_prev * f[t] * (1.0 - f[t])
        row[2 * h:3 * h] = dc * i[t] * (1.0 - g[t] * g[t])
        row[3 * h:] = dh * tcs[t] * o[t] * (1.0 - o[t])
        dc_next = dc * f[t]
        dh_next = UT @ row
    h_prev = np.vstack([np.zeros((1, h)), cache.hs[:-1]])
    grads = {"W": dz.T @ cache.xs, "U": dz.T @ h_prev, "B": dz.sum(axis=0)}
    return grads, (dz @ p.W if need_dx else None)


@dataclass(frozen=True)
class LossSpec:
    """Which objective ``bptt`` differentiates.

    ``kind`` is ``"predict"`` (targets: one frame per input step) or
    ``"classify"`` (target: one integer label for the sequence).
    """

    kind: str
    reg: RegularizationSpec = field(default_factory=RegularizationSpec)
    penalize_head: bool = False

    def __post_init__(self):
        if self.kind not in ("predict", "classify"):
            raise ContractViolation(f"unknown loss kind {self.kind!r}")


def sequence_data_grads(p: LstmParams, head: Head, xs, target, kind: str,
                        dropout: DropoutSpec = EVAL, weight: float = 1.0):
    """Data term of one sequence, summed over steps, and its gradients scaled by ``weight``.

    Returns ``(summed_data_loss, n_steps, grads)`` with grads keyed
    W, U, B, V, c. Predict steps contribute the per-frame MSE, classify steps
    the cross entropy against the sequence label.
    """
    cache = lstm_forward(p, xs, dropout)
    H = cache.outputs
    out = head.logits(H)
    T = out.shape[0]
    if kind == "predict":
        target = np.asarray(target, dtype=DTYPE)
        if target.shape != out.shape:
            raise ContractViolation(
                f"prediction targets have shape {target.shape}, expected {out.shape}"
            )
        diff = out - target
        d = out.shape[1]
        loss = float(np.sum(diff * diff)) / d
        d_out = (2.0 * weight / d) * diff
    elif kind == "classify":
        label = int(target)
        if not 0 <= label < out.shape[1]:
            raise ContractViolation(f"label {label} outside [0, {out.shape[1]})")
        probs = softmax(out)
        loss = float(-np.sum(np.log(np.maximum(probs[:, label], PROB_CLAMP))))
        # the clamp has zero derivative where it is active
        clamped = probs[:, label] < PROB_CLAMP
        d_out = probs
        d_out[:, label] -= 1.0
        if np.any(clamped):
            d_out[clamped] = 0.0
        d_out *= weight
    else:
        raise ContractViolation(f"unknown loss kind {kind!r}")
    grads, _ = lstm_backward(p, cache, d_out @ head.V)
    grads["V"] = d_out.T @ H
    grads["c"] = d_out.sum(axis=0)
    return loss, T, grads


def add_penalty_grads(grads: dict, tensors: dict, reg: RegularizationSpec):
    for k, w in tensors.items():
        grads[k] = grads[k] + penalty_gradient_array(w, reg)
    return grads


def bptt(p: LstmParams, head: Head, xs, targets, loss_spec: LossSpec,
         dropout: DropoutSpec = EVAL):
    """Loss of one sequence and its exact gradients for every trainable tensor.

    The data term is averaged over the evaluated steps; the elastic-net
    penalty covers W, U, B (plus the head when ``loss_spec.penalize_head``).
    Returns ``(LossValue, grads)`` with grads keyed W, U, B, V, c.
    """
    loss_sum, T, grads = sequence_data_grads(p, head, xs, targets, loss_spec.kind, dropout)
    for k in grads:
        grads[k] = grads[k] / T
    penalized = dict(p.tensors())
    if loss_spec.penalize_head:
        penalized.update(head.tensors())
    add_penalty_grads(grads, penalized, loss_spec.reg)
    return LossValue.of(loss_sum / T, elastic_net_penalty(penalized, loss_spec.reg)), grads


def sequence_loss(p: LstmParams, head: Head, xs, targets, loss_spec: LossSpec,
                  dropout: DropoutSpec = EVAL) -> LossValue:
    """Forward-only counterpart of :func:`bptt`."""
    cache = lstm_forward(p, xs, dropout)
    out = head.logits(cache.outputs)
    if loss_spec.kind == "predict":
        targets = np.asarray(targets, dtype=DTYPE)
        if targets.shape != out.shape:
            raise ContractViolation(
                f"prediction targets have shape {targets.shape}, expected {out.shape}"
            )
        data = float(np.mean(np.square(out - targets)))
    else:
        probs = softmax(out)
        data = float(np.mean(-np.log(np.maximum(probs[:, int(targets)], PROB_CLAMP))))
    penalized = dict(p.tensors())
    if loss_spec.penalize_head:
        penalized.update(head.tensors())
    return LossValue.of(data, elastic_net_penalty(penalized, loss_spec.reg))
