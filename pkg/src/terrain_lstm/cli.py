"""Command-line entry point: ``terrain-lstm {synth,train,eval,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or contract
failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields

from . import __version__
from .data import ingest_csv, write_csv
from .errors import ContractViolation, DataError, ModelFormatError
from .gradcheck import REL_TOL, run_gradcheck
from .metrics import emit_history, evaluate, timestep_accuracy
from .persist import FORMAT_VERSION, load_model, save_model
from .pipeline import CASCADE_MODES, TrainConfig, run_training
from .synth import SynthSpec, load_synth_spec, synth_generate

log = logging.getLogger("terrain_lstm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag name -> TrainConfig field
TRAIN_FLAGS = {
    "seed": "seed",
    "epochs": "epochs",
    "stage1-epochs": "stage1_epochs",
    "stage2-epochs": "stage2_epochs",
    "lr": "lr",
    "batch": "batch_size",
    "dropout": "dropout",
    "lambda": "lam",
    "gamma": "gamma",
    "k": "k",
    "hidden": "hidden_size",
    "cascade": "cascade_mode",
    "input-relu": "input_relu",
    "paper-literal-split": "paper_literal_split",
    "norm-global": "norm_global",
    "penalize-head": "penalize_head",
    "clip-norm": "clip_norm",
}
PATH_KEYS = ("data", "out")


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_train_flags(p):
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--config", help="flat JSON config; keys mirror flag names")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--stage1-epochs", type=int)
    p.add_argument("--stage2-epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--cascade", choices=CASCADE_MODES)
    p.add_argument("--input-relu", type=_bool, metavar="BOOL")
    p.add_argument("--paper-literal-split", type=_bool, metavar="BOOL", nargs="?", const=True)
    p.add_argument("--norm-global", type=_bool, metavar="BOOL", nargs="?", const=True)
    p.add_argument("--penalize-head", type=_bool, metavar="BOOL")
    p.add_argument("--clip-norm", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="terrain-lstm", description="Semi-supervised stacked-LSTM terrain classifier.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic labeled dataset CSV")
    p.add_argument("--config", help="flat JSON synthetic spec")
    p.add_argument("--n", type=int, dest="n_sequences")
    p.add_argument("--seed", type=int)
    p.add_argument("--t-min", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--classes", type=int, dest="class_count")
    p.add_argument("--dim", type=int)
    p.add_argument("--noise", type=float, dest="noise_scale")
    p.add_argument("--out", required=True, help="CSV path")

    p = sub.add_parser("train", help="run the two-stage training pipeline")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="score a model on a labeled dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="confusion matrix CSV path")

    p = sub.add_parser("gradcheck", help="compare BPTT gradients to finite differences")
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--lambda", dest="lambda_", type=float, default=0.1)
    p.add_argument("--gammas", default="0,0.5,1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    return parser


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_synth(args) -> int:
    spec = load_synth_spec(args.config) if args.config else SynthSpec()
    overrides = {f.name: getattr(args, f.name) for f in fields(SynthSpec)
                 if getattr(args, f.name, None) is not None}
    spec = SynthSpec(**{**spec.__dict__, **overrides}).validate()
    samples = synth_generate(spec)
    tmp = args.out + ".partial"
    try:
        write_csv(samples, tmp)
        os.replace(tmp, args.out)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    print(f"wrote {len(samples)} sequences to {args.out}")
    return EXIT_OK


def resolve_train_config(args):
    """Merge defaults, the config file and command-line flags (flags win)."""
    values = {}
    paths = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a flat JSON object")
        for key, value in raw.items():
            norm = key.replace("_", "-")
            if norm in PATH_KEYS:
                paths[norm] = value
            elif norm in TRAIN_FLAGS:
                values[TRAIN_FLAGS[norm]] = value
            else:
                raise UsageError(f"unknown config key {key!r}")
    for flag, field_name in TRAIN_FLAGS.items():
        attr = "lambda_" if flag == "lambda" else flag.replace("-", "_")
        v = getattr(args, attr, None)
        if v is not None:
            values[field_name] = v
    for key in PATH_KEYS:
        if getattr(args, key, None):
            paths[key] = getattr(args, key)
    for key in ("input_relu", "paper_literal_split", "norm_global", "penalize_head"):
        if key in values:
            values[key] = _bool(values[key])
    missing = [k for k in PATH_KEYS if k not in paths]
    if missing:
        raise UsageError(f"missing required setting(s): {', '.join('--' + k for k in missing)}")
    return TrainConfig(**values), paths


def cmd_train(args) -> int:
    cfg, paths = resolve_train_config(args)
    data_path, out_dir = paths["data"], paths["out"]
    samples = ingest_csv(data_path, n_features=None)
    run = run_training(samples, cfg)

    os.makedirs(out_dir, exist_ok=True)
    written = []
    try:
        target = os.path.join(out_dir, "model.json")
        save_model(run.model, target)
        written.append(target)
        for name, hist in (("history_stage1.csv", run.stage1_history), ("history_stage2.csv", run.stage2_history)):
            if hist:
                target = os.path.join(out_dir, name)
                emit_history(hist, target)
                written.append(target)
        manifest = {
            "format_version": FORMAT_VERSION,
            "seed": cfg.seed,
            "config": cfg.to_dict(),
            "dataset": {"path": str(data_path), "sha256": _sha256(data_path), "sequences": len(samples)},
            "split": {
                "predictor": len(run.split.predictor_set),
                "classifier_train": len(run.split.classifier_train_set),
                "classifier_val": len(run.split.classifier_val_set),
                "test": len(run.split.test_set),
            },
            "kfold": None if run.kfold is None else {
                "k": cfg.k,
                "fold_accuracies": run.kfold.fold_accuracies,
                "mean": run.kfold.mean,
                "std": run.kfold.std,
            },
            "test_accuracy": run.test_accuracy,
        }
        target = os.path.join(out_dir, "manifest.json")
        with open(target, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")
        written.append(target)
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.unlink(path)
        raise

    if run.kfold is not None:
        print(f"k-fold validation accuracy: {run.kfold.mean:.4f} +- {run.kfold.std:.4f} (k={cfg.k})")
    if run.stage2_history:
        best = min(run.stage2_history, key=lambda r: r.val_loss)
        print(f"stage-2 best epoch {best.epoch}: val loss {best.val_loss:.6f}, val accuracy {best.val_acc:.4f}")
    if run.test_accuracy is not None:
        print(f"held-out test accuracy: {run.test_accuracy:.4f}")
    print(f"wrote {', '.join(os.path.basename(p) for p in written)} to {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    samples = ingest_csv(args.data, n_features=None)
    dim = samples[0].dim if samples else 0
    if dim != model.input_dim:
        raise DataError(f"data has {dim} features per frame but the model expects {model.input_dim}")
    labeled = [s for s in samples if s.label is not None]
    if not labeled:
        raise DataError("no labeled sequences to evaluate")
    normed = model.normalize(labeled)
    acc, cm = evaluate(model, normed)
    step_acc = timestep_accuracy(model, normed)
    print(f"sequences: {len(labeled)}")
    print(f"accuracy: {acc:.6f}")
    print(f"timestep accuracy: {step_acc:.6f}")
    print("confusion matrix (rows = true, cols = predicted):")
    print(cm.render())
    if args.out:
        cm.to_csv(args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    try:
        gammas = tuple(float(g) for g in args.gammas.split(","))
    except ValueError:
        raise UsageError(f"--gammas must be comma-separated numbers, got {args.gammas!r}") from None
    passed, rows = run_gradcheck(args.lambda_, gammas, args.hidden, args.dim, args.steps,
                                 args.classes, args.seed, corrupt=args.corrupt)
    print(f"{'loss':<9}{'gamma':>6}  {'tensor':<6}{'max rel err':>14}")
    for kind, gamma, name, err in rows:
        flag = "" if err < REL_TOL else "  FAIL"
        print(f"{kind:<9}{gamma:>6.2f}  {name:<6}{err:>14.3e}{flag}")
    print(f"gradcheck {'PASS' if passed else 'FAIL'} (tolerance {REL_TOL:g})")
    return EXIT_OK if passed else EXIT_NUMERIC


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
