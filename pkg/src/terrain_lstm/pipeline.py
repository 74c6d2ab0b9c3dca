"""Two-stage semi-supervised training.

Stage 1 learns to predict the next normalized frame from the frames before
it, with no labels. Its weights are then frozen, and stage 2 learns to name
the terrain from what stage 1 produces:

* ``predictive`` cascade: stage 2 reads the stage-1 next-frame predictions
  in training and at inference.
* ``hidden`` cascade: stage 2 reads the stage-1 hidden states.
* ``paper_literal`` cascade: stage 2 trains on the raw normalized frames
  and reads the stage-1 predictions at inference.

Sequences are processed one at a time (no padding or windowing), and
gradients are summed over a mini-batch in batch order.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from .data import N_CLASSES, NormStats, SequenceSample, TerrainLabel, kfold_partition
from .errors import ContractViolation, FrozenParameterError
from .objective import RegularizationSpec, elastic_net_penalty
from .optim import AdamConfig, adam_init, adam_step
from .recurrent import (
    ClassificationHead,
    DropoutSpec,
    EVAL,
    LstmParams,
    PredictionHead,
    add_penalty_grads,
    lstm_forward,
    sequence_data_grads,
)
from .seqcore import DTYPE, SeededRng, relu, softmax

log = logging.getLogger(__name__)

CASCADE_MODES = ("predictive", "hidden", "paper_literal")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 512
    lr: float = 0.005
    dropout: float = 0.2
    k: int = 5
    hidden_size: int = 200
    lam: float = 1e-4
    gamma: float = 0.5
    seed: int = 0
    input_relu: bool = True
    cascade_mode: str = "predictive"
    paper_literal_split: bool = False
    norm_global: bool = False
    penalize_head: bool = True
    stage1_epochs: Optional[int] = None  # overrides ``epochs`` for stage 1
    stage2_epochs: Optional[int] = None  # overrides ``epochs`` for stage 2
    clip_norm: Optional[float] = None

    def __post_init__(self):
        for name in ("batch_size", "hidden_size", "k"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")
        for name in ("epochs", "stage1_epochs", "stage2_epochs"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ContractViolation(f"{name} must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.cascade_mode not in CASCADE_MODES:
            raise ContractViolation(f"cascade_mode must be one of {CASCADE_MODES}, got {self.cascade_mode!r}")
        if not 0 <= self.seed < 2**64:
            raise ContractViolation("seed must be a 64-bit unsigned integer")
        self.reg  # validates lam / gamma
        self.adam

    @property
    def reg(self) -> RegularizationSpec:
        return RegularizationSpec(self.lam, self.gamma)

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(lr=self.lr, clip_norm=self.clip_norm)

    @property
    def epochs_stage1(self) -> int:
        return self.epochs if self.stage1_epochs is None else self.stage1_epochs

    @property
    def epochs_stage2(self) -> int:
        return self.epochs if self.stage2_epochs is None else self.stage2_epochs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ContractViolation(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: Optional[float] = None
    val_acc: Optional[float] = None


@dataclass
class ModelState:
    stage1: LstmParams
    prediction_head: PredictionHead
    stage2: LstmParams
    classification_head: ClassificationHead
    norm: NormStats
    config: TrainConfig
    stage1_frozen: bool = False
    stage2_trained: bool = False

    @property
    def input_dim(self) -> int:
        return self.stage1.input_size

    @property
    def n_classes(self) -> int:
        return self.classification_head.out_size

    def stage1_tensors(self) -> dict:
        return {**self.stage1.tensors(), **self.prediction_head.tensors()}

    def stage2_tensors(self) -> dict:
        return {**self.stage2.tensors(), **self.classification_head.tensors()}

    def set_stage1(self, tensors: dict):
        if self.stage1_frozen:
            raise FrozenParameterError("stage-1 tensors are frozen")
        self.stage1 = LstmParams(tensors["W"], tensors["U"], tensors["B"])
        self.prediction_head = PredictionHead(tensors["V"], tensors["c"])

    def set_stage2(self, tensors: dict):
        self.stage2 = LstmParams(tensors["W"], tensors["U"], tensors["B"])
        self.classification_head = ClassificationHead(tensors["V"], tensors["c"])

    def copy(self) -> "ModelState":
        m = ModelState(self.stage1.copy(), self.prediction_head.copy(), self.stage2.copy(),
                       self.classification_head.copy(), self.norm, self.config,
                       self.stage1_frozen, self.stage2_trained)
        if m.stage1_frozen:
            _lock(m)
        return m

    def normalize(self, samples: Sequence[SequenceSample]) -> list:
        from .data import apply_normalization
        return apply_normalization(samples, self.norm)


def stage2_input_dim(cfg: TrainConfig, input_dim: int) -> int:
    return cfg.hidden_size if cfg.cascade_mode == "hidden" else input_dim


def init_model(cfg: TrainConfig, input_dim: int, n_classes: int = N_CLASSES,
               norm: Optional[NormStats] = None) -> ModelState:
    rng = SeededRng(cfg.seed)
    r1 = rng.child("init-stage1")
    r2 = rng.child("init-stage2")
    h = cfg.hidden_size
    return ModelState(
        stage1=LstmParams.init(input_dim, h, r1),
        prediction_head=PredictionHead.init(input_dim, h, r1),
        stage2=LstmParams.init(stage2_input_dim(cfg, input_dim), h, r2),
        classification_head=ClassificationHead.init(n_classes, h, r2),
        norm=norm if norm is not None else NormStats.identity(input_dim),
        config=cfg,
    )


def _lock(model: ModelState):
    for w in model.stage1_tensors().values():
        w.flags.writeable = False


def freeze_stage1(model: ModelState) -> ModelState:
    """Mark stage 1 immutable. Idempotent."""
    model.stage1_frozen = True
    _lock(model)
    return model


def _check_seq(model: ModelState, s: SequenceSample):
    if s.dim != model.input_dim:
        raise ContractViolation(
            f"sequence {s.id!r} has {s.dim} features, model expects {model.input_dim}"
        )
    if len(s) < 2:
        raise ContractViolation(f"sequence {s.id!r} needs at least 2 frames")


def stage1_inputs(model: ModelState, frames: np.ndarray) -> np.ndarray:
    x = frames[:-1]
    return relu(x) if model.config.input_relu else x


def cascade_features(model: ModelState, sequence: SequenceSample, training: bool = False) -> np.ndarray:
    """Stage-2 inputs for one normalized sequence.

    Predictive mode yields the T-1 next-frame predictions, hidden mode the T
    stage-1 hidden states. In ``paper_literal`` mode, ``training=True`` yields
    the raw frames 2..T instead of their predictions.
    """
    _check_seq(model, sequence)
    X = sequence.frames
    mode = model.config.cascade_mode
    if mode == "hidden":
        x = relu(X) if model.config.input_relu else X
        return lstm_forward(model.stage1, x).hs
    if mode == "paper_literal" and training:
        return X[1:].copy()
    hs = lstm_forward(model.stage1, stage1_inputs(model, X)).hs
    return model.prediction_head.logits(hs)


def _batches(n: int, batch_size: int, rng: SeededRng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _internal_split(n: int, rng: SeededRng):
    perm = rng.permutation(n)
    n_val = n // 5
    if n_val == 0:
        return list(perm), list(perm)
    return sorted(perm[n_val:]), sorted(perm[:n_val])


def stage1_data_loss(model: ModelState, samples: Sequence[SequenceSample]) -> float:
    """Mean per-frame squared error of next-step predictions (evaluation mode)."""
    total = 0.0
    frames = 0
    for s in samples:
        _check_seq(model, s)
        pred = model.prediction_head.logits(lstm_forward(model.stage1, stage1_inputs(model, s.frames)).hs)
        diff = pred - s.frames[1:]
        total += float(np.sum(diff * diff)) / diff.shape[1]
        frames += diff.shape[0]
    return total / frames


def train_stage1(data: Sequence[SequenceSample], cfg: TrainConfig,
                 warm_start: Optional[ModelState] = None,
                 norm: Optional[NormStats] = None, n_classes: int = N_CLASSES):
    """Train the next-step predictor. Returns ``(model, history)``.

    ``data`` must already be normalized. 20% of it (seeded) is held out for
    validation and the parameters of the best validation epoch are kept.
    """
    if not data:
        raise ContractViolation("stage 1 needs at least one sequence")
    if warm_start is not None:
        model = warm_start.copy()
        cfg = replace(cfg, cascade_mode=model.config.cascade_mode, hidden_size=model.config.hidden_size)
        model.config = cfg
    else:
        model = init_model(cfg, data[0].dim, n_classes, norm)
    for s in data:
        _check_seq(model, s)
    epochs = cfg.epochs_stage1
    if epochs == 0:
        return model, []
    if model.stage1_frozen:
        raise FrozenParameterError("cannot continue stage-1 training on a frozen model")

    rng = SeededRng(cfg.seed)
    tr_idx, va_idx = _internal_split(len(data), rng.child("stage1-split"))
    shuffle = rng.child("stage1-shuffle")
    dropout = DropoutSpec(cfg.dropout, True, rng.child("stage1-dropout"))
    reg = cfg.reg
    adam_cfg = cfg.adam

    pairs = [(stage1_inputs(model, s.frames), s.frames[1:]) for s in data]
    train = [pairs[i] for i in tr_idx]
    val = [data[i] for i in va_idx]

    params = model.stage1_tensors()
    state = adam_init(params)
    best = (np.inf, params)
    history = []
    for epoch in range(1, epochs + 1):
        loss_acc = 0.0
        frames_seen = 0
        for batch in _batches(len(train), cfg.batch_size, shuffle):
            lstm = LstmParams(params["W"], params["U"], params["B"])
            head = PredictionHead(params["V"], params["c"])
            n_frames = sum(train[i][1].shape[0] for i in batch)
            grads = None
            data_sum = 0.0
            for i in batch:
                xs, ys = train[i]
                loss, _, g = sequence_data_grads(lstm, head, xs, ys, "predict", dropout, 1.0 / n_frames)
                data_sum += loss
                grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
            lstm_t = lstm.tensors()
            add_penalty_grads(grads, lstm_t, reg)
            batch_loss = data_sum / n_frames + elastic_net_penalty(lstm_t, reg)
            loss_acc += batch_loss * n_frames
            frames_seen += n_frames
            params, state = adam_step(state, params, grads, adam_cfg)
        model.set_stage1(params)
        val_loss = stage1_data_loss(model, val) + elastic_net_penalty(model.stage1, reg)
        rec = EpochRecord(epoch, loss_acc / frames_seen, val_loss)
        history.append(rec)
        _check_finite_record(rec)
        if val_loss < best[0]:
            best = (val_loss, params)
        log.debug("stage1 epoch %d train %.6f val %.6f", epoch, rec.train_loss, val_loss)
    model.set_stage1(best[1])
    return model, history


def _check_finite_record(rec: EpochRecord):
    if not (np.isfinite(rec.train_loss) and np.isfinite(rec.val_loss)):
        raise ContractViolation(f"non-finite loss at epoch {rec.epoch}")


def _require_labels(samples, what):
    for s in samples:
        if s.label is None:
            raise ContractViolation(f"{what} sequence {s.id!r} has no terrain label")


def _stage2_eval(model: ModelState, feats: list, labels: list):
    """(mean per-sequence cross entropy, sequence accuracy) in evaluation mode."""
    ce = 0.0
    correct = 0
    for x, y in zip(feats, labels):
        probs = softmax(model.classification_head.logits(lstm_forward(model.stage2, x).hs))
        ce += float(np.mean(-np.log(np.maximum(probs[:, y], 1e-12))))
        correct += int(np.argmax(probs.mean(axis=0)) == y)
    return ce / len(feats), correct / len(feats)


def _stage2_penalized(model: ModelState, cfg: TrainConfig) -> dict:
    return model.stage2_tensors() if cfg.penalize_head else model.stage2.tensors()


def train_stage2(model: ModelState, labeled_train: Sequence[SequenceSample],
                 labeled_val: Sequence[SequenceSample], cfg: Optional[TrainConfig] = None):
    """Train the terrain classifier on top of the frozen stage 1.

    Returns ``(model, history)``; the stage-2 parameters of the best
    validation-loss epoch are kept. Stage 1 is never modified.
    """
    cfg = cfg if cfg is not None else model.config
    if not model.stage1_frozen:
        raise ContractViolation("stage 1 must be frozen before stage-2 training")
    if not labeled_train:
        raise ContractViolation("stage 2 needs at least one labeled training sequence")
    _require_labels(labeled_train, "training")
    _require_labels(labeled_val, "validation")
    if cfg.cascade_mode != model.config.cascade_mode or cfg.hidden_size != model.config.hidden_size:
        raise ContractViolation("stage-2 config must keep the model's cascade mode and hidden size")
    model = model.copy()
    model.config = cfg
    epochs = cfg.epochs_stage2
    if epochs == 0:
        return model, []

    rng = SeededRng(cfg.seed)
    shuffle = rng.child("stage2-shuffle")
    dropout = DropoutSpec(cfg.dropout, True, rng.child("stage2-dropout"))
    reg = cfg.reg
    adam_cfg = cfg.adam
    train_x = [cascade_features(model, s, training=True) for s in labeled_train]
    train_y = [s.label for s in labeled_train]
    eval_train_x = train_x if cfg.cascade_mode != "paper_literal" else \
        [cascade_features(model, s) for s in labeled_train]
    val_x = [cascade_features(model, s) for s in labeled_val]
    val_y = [s.label for s in labeled_val]
    if not val_x:
        val_x, val_y = eval_train_x, train_y

    params = model.stage2_tensors()
    state = adam_init(params)
    best = (np.inf, params)
    history = []
    for epoch in range(1, epochs + 1):
        for batch in _batches(len(train_x), cfg.batch_size, shuffle):
            lstm = LstmParams(params["W"], params["U"], params["B"])
            head = ClassificationHead(params["V"], params["c"])
            grads = None
            for i in batch:
                T = train_x[i].shape[0]
                _, _, g = sequence_data_grads(lstm, head, train_x[i], train_y[i], "classify",
                                              dropout, 1.0 / (len(batch) * T))
                grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
            pen = {**lstm.tensors(), **head.tensors()} if cfg.penalize_head else lstm.tensors()
            add_penalty_grads(grads, pen, reg)
            params, state = adam_step(state, params, grads, adam_cfg)
        model.set_stage2(params)
        penalty = elastic_net_penalty(_stage2_penalized(model, cfg), reg)
        tr_ce, tr_acc = _stage2_eval(model, eval_train_x, train_y)
        va_ce, va_acc = _stage2_eval(model, val_x, val_y)
        rec = EpochRecord(epoch, tr_ce + penalty, va_ce + penalty, tr_acc, va_acc)
        _check_finite_record(rec)
        history.append(rec)
        if rec.val_loss < best[0]:
            best = (rec.val_loss, params)
        log.debug("stage2 epoch %d train %.6f val %.6f acc %.3f/%.3f",
                  epoch, rec.train_loss, rec.val_loss, tr_acc, va_acc)
    model.set_stage2(best[1])
    model.stage2_trained = True
    return model, history


@dataclass
class KFoldReport:
    fold_accuracies: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracies))


def kfold_stage2(model: ModelState, labeled: Sequence[SequenceSample], cfg: Optional[TrainConfig] = None):
    """Train one stage-2 model per fold of ``labeled`` and report validation accuracy.

    Returns ``(KFoldReport, [(model, history), ...])``.
    """
    cfg = cfg if cfg is not None else model.config
    _require_labels(labeled, "k-fold")
    folds = kfold_partition(list(labeled), cfg.k, cfg.seed)
    report = KFoldReport()
    runs = []
    for f, held in enumerate(folds):
        train = [s for g, fold in enumerate(folds) if g != f for s in fold]
        fold_model, hist = train_stage2(model, train, held, cfg)
        _, acc = _stage2_eval(fold_model, [cascade_features(fold_model, s) for s in held],
                              [s.label for s in held])
        report.fold_accuracies.append(acc)
        runs.append((fold_model, hist))
    return report, runs


def class_distributions(model: ModelState, sequence: SequenceSample) -> np.ndarray:
    """Per-step class distributions (evaluation mode)."""
    feats = cascade_features(model, sequence)
    return softmax(model.classification_head.logits(lstm_forward(model.stage2, feats, EVAL).hs))


def predict_sequence(model: ModelState, sequence: SequenceSample):
    """Terrain of a normalized sequence: argmax of the time-averaged distribution."""
    if not model.stage2_trained:
        raise ContractViolation("model has no trained classifier")
    dist = class_distributions(model, sequence).mean(axis=0)
    return TerrainLabel(int(np.argmax(dist))), dist


@dataclass
class TrainingRun:
    model: ModelState
    stage1_history: list
    stage2_history: list
    split: object
    kfold: Optional[KFoldReport] = None
    test_accuracy: Optional[float] = None


def run_training(samples: Sequence[SequenceSample], cfg: TrainConfig) -> TrainingRun:
    """Split, normalize, train both stages (plus k-fold) and score the test resample.

    Label and size preconditions are checked before any training starts.
    """
    from .data import apply_normalization, compute_norm_stats, split_semi_supervised

    split = split_semi_supervised(list(samples), cfg.seed)
    _require_labels(split.classifier_train_set, "classifier-training")
    _require_labels(split.classifier_val_set, "classifier-validation")
    if cfg.k > 1 and len(split.classifier_train_set) < cfg.k:
        raise ContractViolation(
            f"k-fold with k={cfg.k} needs at least {cfg.k} classifier-training sequences, "
            f"got {len(split.classifier_train_set)}"
        )
    predictor = split.predictor_training(cfg.paper_literal_split)
    norm = compute_norm_stats(list(samples) if cfg.norm_global else predictor)
    normed = lambda part: apply_normalization(part, norm)

    model, hist1 = train_stage1(normed(predictor), cfg, norm=norm)
    freeze_stage1(model)
    cls_train = normed(split.classifier_train_set)
    report = None
    if cfg.k > 1:
        report, _ = kfold_stage2(model, cls_train, cfg)
        log.info("k-fold validation accuracy %.4f +- %.4f", report.mean, report.std)
    model, hist2 = train_stage2(model, cls_train, normed(split.classifier_val_set), cfg)

    test_acc = None
    labeled_test = [s for s in split.test_set if s.label is not None]
    if labeled_test and model.stage2_trained:
        hits = sum(int(predict_sequence(model, s)[0]) == s.label for s in normed(labeled_test))
        test_acc = hits / len(labeled_test)
    return TrainingRun(model, hist1, hist2, split, report, test_acc)
