"""Accuracy, confusion matrices and training-history CSVs."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import N_CLASSES, TerrainLabel, format_real
from .errors import ContractViolation, DataError
from .pipeline import EpochRecord, class_distributions, predict_sequence

HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss", "train_acc", "val_acc"]


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, cols = predicted class

    @classmethod
    def from_pairs(cls, truth, predicted, n_classes: int = N_CLASSES) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(truth, dtype=int), np.asarray(predicted, dtype=int)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise ContractViolation("accuracy of an empty confusion matrix")
        return float(np.trace(self.counts)) / self.total

    def to_csv(self, path) -> None:
        names = [TerrainLabel(i).text if i < N_CLASSES else str(i) for i in range(len(self.counts))]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred", *names])
            for name, row in zip(names, self.counts):
                w.writerow([name, *map(int, row)])

    def render(self) -> str:
        names = [TerrainLabel(i).text if i < N_CLASSES else str(i) for i in range(len(self.counts))]
        width = max(8, *(len(n) for n in names))
        lines = ["true\\pred".ljust(width) + "".join(n[:width].rjust(width + 1) for n in names)]
        for name, row in zip(names, self.counts):
            lines.append(name.ljust(width) + "".join(str(int(v)).rjust(width + 1) for v in row))
        return "\n".join(lines)


def evaluate(model, labeled_samples: Sequence):
    """Sequence-level accuracy and confusion matrix on normalized, labeled samples."""
    if not labeled_samples:
        raise ContractViolation("evaluate needs at least one sample")
    truth, preds = [], []
    for s in labeled_samples:
        if s.label is None:
            raise ContractViolation(f"sequence {s.id!r} has no label")
        label, _ = predict_sequence(model, s)
        truth.append(s.label)
        preds.append(int(label))
    cm = ConfusionMatrix.from_pairs(truth, preds, model.n_classes)
    return cm.accuracy, cm


def timestep_accuracy(model, labeled_samples: Sequence) -> float:
    """Fraction of individual time steps whose argmax matches the sequence label."""
    hits = steps = 0
    for s in labeled_samples:
        dist = class_distributions(model, s)
        hits += int(np.sum(np.argmax(dist, axis=1) == s.label))
        steps += dist.shape[0]
    return hits / steps


def _cell(v):
    return "" if v is None else format_real(v)


def emit_history(history: Sequence[EpochRecord], path) -> None:
    if not history:
        raise ContractViolation("cannot emit an empty history")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in history:
                w.writerow([r.epoch, _cell(r.train_loss), _cell(r.val_loss), _cell(r.train_acc), _cell(r.val_acc)])
    except OSError as exc:
        raise OSError(f"cannot write history to {os.fspath(path)}: {exc.strerror or exc}") from exc


def read_history(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != HISTORY_COLUMNS:
            raise DataError("history file has an unexpected header", line=1)
        for row in reader:
            opt = lambda s: float(s) if s else None
            out.append(EpochRecord(int(row[0]), float(row[1]), float(row[2]), opt(row[3]), opt(row[4])))
    return out
