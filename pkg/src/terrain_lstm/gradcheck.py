"""Finite-difference verification of the BPTT gradients on a toy network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objective import RegularizationSpec
from .recurrent import (
    ClassificationHead,
    LossSpec,
    LstmParams,
    PredictionHead,
    bptt,
    sequence_loss,
)
from .seqcore import SeededRng

FD_STEP = 1e-5
REL_TOL = 1e-5
KINK_EXCLUSION = 1e-3
# guards the relative error against 0/0 for exactly-zero gradients
REL_FLOOR = 1e-8


@dataclass
class ToyProblem:
    params: LstmParams
    head: object
    xs: np.ndarray
    targets: object
    spec: LossSpec


def make_toy(kind: str, reg: RegularizationSpec, hidden=8, dim=4, steps=5, classes=3,
             seed=0, penalize_head=False) -> ToyProblem:
    rng = SeededRng(seed)
    scale = 0.5
    params = LstmParams(
        rng.uniform(-scale, scale, (4 * hidden, dim)),
        rng.uniform(-scale, scale, (4 * hidden, hidden)),
        rng.uniform(-scale, scale, 4 * hidden),
    )
    xs = rng.gaussian(0.0, 1.0, (steps, dim))
    if kind == "predict":
        head = PredictionHead(rng.uniform(-scale, scale, (dim, hidden)), rng.uniform(-scale, scale, dim))
        targets = rng.gaussian(0.0, 1.0, (steps, dim))
    else:
        head = ClassificationHead(rng.uniform(-scale, scale, (classes, hidden)),
                                  rng.uniform(-scale, scale, classes))
        targets = int(rng.generator.integers(classes))
    return ToyProblem(params, head, xs, targets, LossSpec(kind, reg, penalize_head))


def _loss_at(problem: ToyProblem) -> float:
    return sequence_loss(problem.params, problem.head, problem.xs, problem.targets, problem.spec).total


def numeric_gradients(problem: ToyProblem, step: float = FD_STEP) -> dict:
    """Central differences of the total loss for every entry of every tensor."""
    tensors = {**problem.params.tensors(), **problem.head.tensors()}
    out = {}
    for name, w in tensors.items():
        g = np.zeros_like(w)
        flat = w.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = _loss_at(problem)
            flat[idx] = orig - step
            down = _loss_at(problem)
            flat[idx] = orig
            gflat[idx] = (up - down) / (2.0 * step)
        out[name] = g
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def check_problem(problem: ToyProblem, corrupt: float = 0.0) -> dict:
    """Max relative error per tensor, skipping entries with |w| <= KINK_EXCLUSION.

    ``corrupt`` is added to one analytic gradient entry (harness self-test).
    """
    _, analytic = bptt(problem.params, problem.head, problem.xs, problem.targets, problem.spec)
    if corrupt:
        analytic["W"] = analytic["W"].copy()
        analytic["W"].flat[0] += corrupt
    numeric = numeric_gradients(problem)
    tensors = {**problem.params.tensors(), **problem.head.tensors()}
    report = {}
    for name, w in tensors.items():
        keep = np.abs(w) > KINK_EXCLUSION
        err = relative_error(analytic[name], numeric[name])[keep]
        report[name] = float(err.max()) if err.size else 0.0
    return report


def run_gradcheck(lam=0.1, gammas=(0.0, 0.5, 1.0), hidden=8, dim=4, steps=5, classes=3,
                  seed=0, corrupt=0.0, tol=REL_TOL):
    """Check both losses for each gamma. Returns ``(passed, rows)``.

    Each row is ``(kind, gamma, tensor, max_rel_err)``.
    """
    rows = []
    for kind in ("predict", "classify"):
        for gamma in gammas:
            reg = RegularizationSpec(lam, gamma)
            # stage-2 training penalizes the classification head as well
            problem = make_toy(kind, reg, hidden, dim, steps, classes, seed,
                               penalize_head=(kind == "classify"))
            for name, err in check_problem(problem, corrupt).items():
                rows.append((kind, gamma, name, err))
    passed = all(err < tol for *_, err in rows)
    return passed, rows
