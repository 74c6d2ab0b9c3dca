"""Sensor sequences: CSV ingestion, normalization and dataset splits.

Canonical CSV layout (one row per time step)::

    seq_id,t,f0..f11,ax,ay,az,gx,gy,gz,qw,qx,qy,qz,label

``f0..f11`` are the four three-axis foot force sensors, followed by linear
acceleration, angular velocity and the orientation quaternion. ``t`` is a
non-negative integer strictly increasing within a sequence; ``label`` is a
lowercase terrain name or empty. Datasets with a feature width other than 22
use generic columns ``v0..v{n-1}`` in place of the named sensor channels.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ContractViolation, DataError
from .seqcore import DTYPE, SeededRng


class TerrainLabel(IntEnum):
    CONCRETE = 0
    GRASSY = 1
    GRAVEL = 2
    MULCH = 3
    DIRT = 4
    SANDY = 5

    @classmethod
    def parse(cls, name: str) -> "TerrainLabel":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown terrain label {name!r}") from None

    @property
    def text(self) -> str:
        return self.name.lower()


N_CLASSES = len(TerrainLabel)

FORCE_COLUMNS = [f"f{i}" for i in range(12)]
IMU_COLUMNS = ["ax", "ay", "az", "gx", "gy", "gz", "qw", "qx", "qy", "qz"]
FEATURE_COLUMNS = FORCE_COLUMNS + IMU_COLUMNS
FRAME_DIM = len(FEATURE_COLUMNS)


def feature_columns(n_features: int) -> list:
    if n_features == FRAME_DIM:
        return list(FEATURE_COLUMNS)
    return [f"v{i}" for i in range(n_features)]


def csv_header(n_features: int = FRAME_DIM) -> list:
    return ["seq_id", "t", *feature_columns(n_features), "label"]


@dataclass(frozen=True)
class FeatureFrame:
    force: Sequence[float]
    accel: Sequence[float]
    gyro: Sequence[float]
    orientation: Sequence[float]

    def vector(self) -> np.ndarray:
        v = np.concatenate([np.asarray(p, dtype=DTYPE) for p in
                            (self.force, self.accel, self.gyro, self.orientation)])
        if v.shape != (FRAME_DIM,):
            raise ContractViolation(f"a frame flattens to {FRAME_DIM} values, got {v.shape[0]}")
        return v


@dataclass
class SequenceSample:
    id: str
    frames: np.ndarray  # (T, d)
    label: Optional[int] = None
    t: Optional[np.ndarray] = None  # integer time index, defaults to 0..T-1

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=DTYPE)
        if self.frames.ndim != 2:
            raise ContractViolation(f"sequence {self.id!r}: frames must be (T, d)")
        if self.frames.shape[0] < 2:
            raise ContractViolation(f"sequence {self.id!r} has {self.frames.shape[0]} frame(s), need >= 2")
        if not np.all(np.isfinite(self.frames)):
            raise ContractViolation(f"sequence {self.id!r} has non-finite values")
        if self.label is not None:
            self.label = int(self.label)
            if not 0 <= self.label < N_CLASSES:
                raise ContractViolation(f"sequence {self.id!r}: label {self.label} out of range")
        if self.t is None:
            self.t = np.arange(self.frames.shape[0])
        else:
            self.t = np.asarray(self.t, dtype=np.int64)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def with_frames(self, frames) -> "SequenceSample":
        return SequenceSample(self.id, frames, self.label, self.t)


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), True
    return source, False


def ingest_csv(source, n_features: Optional[int] = FRAME_DIM,
               header_map: Optional[Mapping[str, str]] = None) -> list:
    """Parse a sensor CSV into sequences, in order of first appearance.

    ``source`` is a path or a text stream. ``header_map`` renames source
    columns to canonical names before validation, so files with other column
    names or orders can be read. With ``n_features=None`` the width is taken
    from the header.
    """
    fh, owned = _open_text(source)
    try:
        return _ingest(fh, n_features, header_map)
    finally:
        if owned:
            fh.close()


def _ingest(fh, n_features, header_map):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty CSV: no header", line=1) from None
    header = [h.strip() for h in header]
    if header_map:
        header = [header_map.get(h, h) for h in header]

    for required in ("seq_id", "t"):
        if required not in header:
            raise DataError(f"missing column {required!r}", line=1)
    if n_features is None:
        n_features = FRAME_DIM if set(FEATURE_COLUMNS) <= set(header) else sum(
            1 for h in header if h.startswith("v") and h[1:].isdigit())
    feats = feature_columns(n_features)
    missing = [c for c in feats if c not in header]
    if missing:
        present = sum(1 for h in header if h not in ("seq_id", "t", "label"))
        raise DataError(
            f"header has {present} feature columns, expected {n_features} (missing {', '.join(missing[:5])})",
            line=1,
        )
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header", line=1)
    col = {name: i for i, name in enumerate(header)}
    i_seq, i_t = col["seq_id"], col["t"]
    i_feat = [col[c] for c in feats]
    i_label = col.get("label")
    width = len(header)

    order = []
    rows = {}
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != width:
            raise DataError(f"row has {len(row)} columns, header has {width}", line=line)
        seq_id = row[i_seq].strip()
        if not seq_id:
            raise DataError("empty seq_id", line=line)
        try:
            t = int(row[i_t])
        except ValueError:
            raise DataError(f"time index {row[i_t]!r} is not an integer", line=line) from None
        if t < 0:
            raise DataError(f"negative time index {t}", line=line)
        try:
            values = [float(row[i]) for i in i_feat]
        except ValueError as exc:
            raise DataError(f"non-numeric feature value ({exc})", line=line) from None
        if not all(math.isfinite(v) for v in values):
            raise DataError("non-finite feature value", line=line)
        label = None
        if i_label is not None and row[i_label].strip():
            try:
                label = int(TerrainLabel.parse(row[i_label]))
            except ValueError as exc:
                raise DataError(str(exc), line=line) from None

        entry = rows.get(seq_id)
        if entry is None:
            entry = rows[seq_id] = {"t": [], "x": [], "label": label, "first": line}
            order.append(seq_id)
        else:
            if t <= entry["t"][-1]:
                raise DataError(
                    f"time index {t} of sequence {seq_id!r} does not increase (previous {entry['t'][-1]})",
                    line=line,
                )
            if label != entry["label"]:
                raise DataError(f"sequence {seq_id!r} has inconsistent labels", line=line)
        entry["t"].append(t)
        entry["x"].append(values)

    samples = []
    for seq_id in order:
        e = rows[seq_id]
        if len(e["t"]) < 2:
            raise DataError(f"sequence {seq_id!r} has a single frame; at least 2 are required",
                            line=e["first"])
        samples.append(SequenceSample(seq_id, np.array(e["x"], dtype=DTYPE), e["label"],
                                      np.array(e["t"], dtype=np.int64)))
    return samples


def format_real(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(samples: Iterable[SequenceSample], dest) -> None:
    """Emit sequences in the canonical layout with 17 significant digits."""
    samples = list(samples)
    if not samples:
        raise ContractViolation("no sequences to write")
    dim = samples[0].dim
    if any(s.dim != dim for s in samples):
        raise ContractViolation("sequences have different feature widths")
    fh, owned = (open(dest, "w", newline="", encoding="utf-8"), True) \
        if isinstance(dest, (str, os.PathLike)) else (dest, False)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(dim))
        for s in samples:
            label = "" if s.label is None else TerrainLabel(s.label).text
            for t, frame in zip(s.t, s.frames):
                w.writerow([s.id, int(t), *map(format_real, frame), label])
    finally:
        if owned:
            fh.close()


def to_csv_text(samples) -> str:
    buf = io.StringIO()
    write_csv(samples, buf)
    return buf.getvalue()


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.std) <= 0):
            raise ContractViolation("normalization std entries must be > 0")

    @classmethod
    def identity(cls, dim: int) -> "NormStats":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return len(self.mean)


def compute_norm_stats(samples: Sequence[SequenceSample]) -> NormStats:
    """Per-dimension mean and population std over every frame of ``samples``.

    Constant dimensions get std 1 so they normalize to 0.
    """
    if not samples:
        raise ContractViolation("cannot compute normalization statistics of no samples")
    X = np.concatenate([s.frames for s in samples], axis=0)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    degenerate = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    std = np.where(degenerate, 1.0, std)
    return NormStats(mean, std)


def apply_normalization(samples: Sequence[SequenceSample], stats: NormStats) -> list:
    out = []
    for s in samples:
        if s.dim != stats.dim:
            raise ContractViolation(
                f"sequence {s.id!r} has {s.dim} features, normalization expects {stats.dim}"
            )
        out.append(s.with_frames((s.frames - stats.mean) / stats.std))
    return out


@dataclass
class SplitResult:
    predictor_set: list
    classifier_train_set: list
    classifier_val_set: list
    test_set: list = field(default_factory=list)

    def predictor_training(self, paper_literal: bool = False) -> list:
        """Sequences stage 1 trains on.

        The held-out mode drops the test resample from the predictor set;
        ``paper_literal`` keeps the overlap.
        """
        if paper_literal:
            return list(self.predictor_set)
        test_ids = {s.id for s in self.test_set}
        return [s for s in self.predictor_set if s.id not in test_ids]


MIN_SPLIT_SEQUENCES = 20


def _stratified_order(samples, rng: SeededRng) -> list:
    """Seeded shuffle that interleaves labels round-robin; unlabeled last."""
    by_label = {}
    for idx, s in enumerate(samples):
        by_label.setdefault(s.label, []).append(idx)
    unlabeled = by_label.pop(None, [])
    labels = sorted(by_label)
    labels = [labels[i] for i in rng.permutation(len(labels))]
    pools = {lab: [by_label[lab][i] for i in rng.permutation(len(by_label[lab]))] for lab in labels}
    order = []
    depth = max((len(p) for p in pools.values()), default=0)
    for r in range(depth):
        for lab in labels:
            if r < len(pools[lab]):
                order.append(pools[lab][r])
    order.extend(unlabeled[i] for i in rng.permutation(len(unlabeled)))
    return order


def split_semi_supervised(samples: Sequence[SequenceSample], seed: int) -> SplitResult:
    """Split whole sequences 90 / 5 / 5 into predictor, classifier-train and classifier-val.

    The 5% parts are floored and the remainder goes to the predictor. The
    shuffle is stratified by label, with labeled sequences placed ahead of
    unlabeled ones, so the small classifier parts cover every terrain. The
    test set is a seeded 10% resample of the predictor set.
    """
    n = len(samples)
    if n < MIN_SPLIT_SEQUENCES:
        raise ContractViolation(f"need at least {MIN_SPLIT_SEQUENCES} sequences to split, got {n}")
    rng = SeededRng(seed).child("split")
    order = _stratified_order(samples, rng)
    n_cls = n * 5 // 100
    cls_train = [samples[i] for i in order[:n_cls]]
    cls_val = [samples[i] for i in order[n_cls:2 * n_cls]]
    predictor = [samples[i] for i in sorted(order[2 * n_cls:])]
    n_test = max(1, len(predictor) // 10)
    pick = sorted(rng.permutation(len(predictor))[:n_test])
    test = [predictor[i] for i in pick]
    return SplitResult(predictor, cls_train, cls_val, test)


def kfold_partition(samples: Sequence, k: int, seed: int) -> list:
    """Seeded partition into ``k`` disjoint folds whose sizes differ by at most 1."""
    if not isinstance(k, (int, np.integer)) or k < 2:
        raise ContractViolation(f"k must be an integer >= 2, got {k!r}")
    n = len(samples)
    if n < k:
        raise ContractViolation(f"cannot make {k} folds from {n} samples")
    perm = SeededRng(seed).child("kfold").permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        folds.append([samples[i] for i in perm[start:start + size]])
        start += size
    return folds
