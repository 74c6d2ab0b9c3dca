"""Model files: versioned JSON with tensors as flat 17-significant-digit arrays."""
from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .data import NormStats, format_real
from .errors import ModelFormatError
from .pipeline import ModelState, TrainConfig, _lock
from .recurrent import GATE_ORDER, ClassificationHead, LstmParams, PredictionHead

FORMAT_NAME = "terrain-lstm-model"
FORMAT_VERSION = "1"


def _tensor_text(a: np.ndarray) -> str:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ModelFormatError("refusing to serialize a non-finite tensor")
    shape = json.dumps(list(a.shape))
    data = ", ".join(format_real(v) for v in a.reshape(-1))
    return f'{{"shape": {shape}, "data": [{data}]}}'


def model_to_text(model: ModelState) -> str:
    tensors = {}

    def slot(a):
        key = f"@@tensor{len(tensors)}@@"
        tensors[key] = a
        return key

    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "gate_order": GATE_ORDER,
        "stage1_frozen": model.stage1_frozen,
        "stage2_trained": model.stage2_trained,
        "config": model.config.to_dict(),
        "norm": {"mean": slot(model.norm.mean), "std": slot(model.norm.std)},
        "stage1": {k: slot(v) for k, v in model.stage1.tensors().items()},
        "prediction_head": {k: slot(v) for k, v in model.prediction_head.tensors().items()},
        "stage2": {k: slot(v) for k, v in model.stage2.tensors().items()},
        "classification_head": {k: slot(v) for k, v in model.classification_head.tensors().items()},
    }
    text = json.dumps(doc, indent=1, sort_keys=False)
    for key, a in tensors.items():
        text = text.replace(f'"{key}"', _tensor_text(a), 1)
    return text + "\n"


def save_model(model: ModelState, path) -> None:
    """Write atomically: a crash never leaves a partial file at ``path``."""
    text = model_to_text(model)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".model-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _tensor(node, name):
    try:
        shape = tuple(int(s) for s in node["shape"])
        data = np.array(node["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed tensor {name}: {exc}") from None
    if data.size != int(np.prod(shape)):
        raise ModelFormatError(f"tensor {name} has {data.size} values for shape {shape}")
    if not np.all(np.isfinite(data)):
        raise ModelFormatError(f"tensor {name} contains non-finite values")
    return data.reshape(shape)


def model_from_text(text: str) -> ModelState:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON (truncated or corrupt): {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFormatError("not a terrain-lstm model file")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {doc.get('version')!r}, expected {FORMAT_VERSION!r}"
        )
    if doc.get("gate_order") != GATE_ORDER:
        raise ModelFormatError(f"unsupported gate order {doc.get('gate_order')!r}")
    try:
        cfg = TrainConfig.from_dict(doc["config"])
        group = lambda g: {k: _tensor(v, f"{g}.{k}") for k, v in doc[g].items()}
        s1, ph, s2, ch = (group(g) for g in ("stage1", "prediction_head", "stage2", "classification_head"))
        model = ModelState(
            stage1=LstmParams(s1["W"], s1["U"], s1["B"]),
            prediction_head=PredictionHead(ph["V"], ph["c"]),
            stage2=LstmParams(s2["W"], s2["U"], s2["B"]),
            classification_head=ClassificationHead(ch["V"], ch["c"]),
            norm=NormStats(_tensor(doc["norm"]["mean"], "norm.mean"), _tensor(doc["norm"]["std"], "norm.std")),
            config=cfg,
            stage1_frozen=bool(doc["stage1_frozen"]),
            stage2_trained=bool(doc["stage2_trained"]),
        )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model file is missing or has malformed fields: {exc}") from None
    if model.prediction_head.out_size != model.input_dim or model.norm.dim != model.input_dim:
        raise ModelFormatError("model tensors have inconsistent dimensions")
    if model.stage1_frozen:
        _lock(model)
    return model


def load_model(path) -> ModelState:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from None
    return model_from_text(text)


def stage1_bytes(model: ModelState) -> bytes:
    """Canonical serialization of the stage-1 tensors (freeze-invariance checks)."""
    parts = [f"{k}:{_tensor_text(v)}" for k, v in model.stage1_tensors().items()]
    return "\n".join(parts).encode()
