"""One test per acceptance criterion; each prints a PASS/FAIL line."""
import io
import json
import math
import time

import numpy as np
import pytest

from conftest import BENCH_CONFIG, record_criterion
from terrain_lstm.cli import main
from terrain_lstm.data import (SequenceSample, apply_normalization, compute_norm_stats, csv_header,
                               ingest_csv, kfold_partition, split_semi_supervised, to_csv_text, write_csv)
from terrain_lstm.gradcheck import run_gradcheck
from terrain_lstm.metrics import read_history
from terrain_lstm.objective import (RegularizationSpec, classifying_loss, cross_entropy_term,
                                    elastic_net_penalty, one_hot, penalty_gradient_array,
                                    predicting_loss, squared_error_term)
from terrain_lstm.optim import AdamConfig, adam_init, adam_step
from terrain_lstm.persist import load_model, save_model, stage1_bytes
from terrain_lstm.pipeline import (TrainConfig, class_distributions, freeze_stage1, kfold_stage2,
                                   predict_sequence, train_stage1, train_stage2)
from terrain_lstm.recurrent import ClassificationHead, LossSpec, LstmParams, PredictionHead, bptt
from terrain_lstm.seqcore import SeededRng
from terrain_lstm.synth import SynthSpec, synth_generate


def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    passed, rows = run_gradcheck(lam=0.1, gammas=(0.0, 0.5, 1.0), hidden=8, dim=4, steps=5, classes=3)
    elapsed = time.perf_counter() - start
    worst = max(r[3] for r in rows)
    ok = passed and worst < 1e-5 and elapsed < 60 and {(r[0], r[1]) for r in rows} == {
        (k, g) for k in ("predict", "classify") for g in (0.0, 0.5, 1.0)}
    assert record_criterion(1, "gradient correctness", ok,
                            f"max relative error {worst:.2e} over {len(rows)} tensor checks in {elapsed:.1f}s")


def test_criterion_2_loss_identities():
    rng = SeededRng(5)
    w = [rng.uniform(-2, 2, (3, 4)), rng.uniform(-2, 2, 5)]
    x, x_hat = rng.uniform(-1, 1, 6), rng.uniform(-1, 1, 6)
    y, y_hat = one_hot(2, 6), np.array([0.1, 0.2, 0.3, 0.25, 0.1, 0.05])
    zero = RegularizationSpec(0.0, 0.5)
    checks = {
        "predict lambda=0": predicting_loss(x, x_hat, w, zero).total == squared_error_term(x, x_hat),
        "classify lambda=0": classifying_loss(y, y_hat, w, zero).total == cross_entropy_term(y, y_hat),
        "gamma=1 is lambda*l1": math.isclose(elastic_net_penalty(w, RegularizationSpec(0.3, 1.0)),
                                             0.3 * sum(np.abs(a).sum() for a in w), rel_tol=1e-14),
        "gamma=0 is lambda*l2^2": math.isclose(elastic_net_penalty(w, RegularizationSpec(0.3, 0.0)),
                                               0.3 * sum((a * a).sum() for a in w), rel_tol=1e-14),
        "uniform 6-class cross entropy": abs(classifying_loss(y, np.full(6, 1 / 6)).total - 1.791759) < 1e-6
        and abs(classifying_loss(y, np.full(6, 1 / 6)).total - math.log(6)) < 1e-9,
        "penalty 1.75": abs(elastic_net_penalty([np.array([2.0])], RegularizationSpec(0.5, 0.25)) - 1.75) < 1e-12,
        "predicting loss 0.5375": abs(predicting_loss([1, 0], [0, 0], [np.array([0.5])],
                                                      RegularizationSpec(0.1, 0.5)).total - 0.5375) < 1e-12,
        "cross entropy -ln 0.75": abs(classifying_loss([1, 0], [0.75, 0.25]).total + math.log(0.75)) < 1e-12,
        "penalty gradient 2.5": penalty_gradient_array(np.array([2.0]), RegularizationSpec(1.0, 0.5))[0] == 2.5,
    }
    # the sequence-level losses drop their penalty exactly as well
    p = LstmParams.init(3, 4, SeededRng(1))
    xs = SeededRng(2).uniform(-1, 1, (5, 3))
    for kind, head, target in (("predict", PredictionHead.init(3, 4, SeededRng(3)), SeededRng(4).uniform(-1, 1, (5, 3))),
                               ("classify", ClassificationHead.init(6, 4, SeededRng(3)), 4)):
        loss, _ = bptt(p, head, xs, target, LossSpec(kind, zero, penalize_head=True))
        checks[f"{kind} sequence lambda=0"] = loss.penalty_term == 0.0 and loss.total == loss.data_term
    failed = [k for k, v in checks.items() if not v]
    assert record_criterion(2, "loss identities", not failed,
                            f"{len(checks) - len(failed)}/{len(checks)} identities hold" + (f"; failed {failed}" if failed else ""))


def test_criterion_3_freeze_invariance():
    data = synth_generate(SynthSpec(n_sequences=30, t_min=10, t_max=14, seed=8))
    normed = apply_normalization(data, compute_norm_stats(data))
    cfg = TrainConfig(hidden_size=8, stage1_epochs=3, stage2_epochs=4, batch_size=6, seed=2, k=3)
    model, _ = train_stage1(normed, cfg)
    freeze_stage1(model)
    snapshot = stage1_bytes(model)
    trained, _ = train_stage2(model, normed[:18], normed[18:24], cfg)
    _, runs = kfold_stage2(model, normed[:18], cfg)
    after = [stage1_bytes(trained), stage1_bytes(model)] + [stage1_bytes(m) for m, _ in runs]
    ok = all(b == snapshot for b in after)
    assert record_criterion(3, "freeze invariance", ok, f"{len(after)} post-stage-2 snapshots byte-identical")


def test_criterion_4_end_to_end_learning(bench_run):
    run, elapsed = bench_run
    n_test = len(run.split.test_set)
    acc = run.test_accuracy
    epochs_ok = BENCH_CONFIG.epochs_stage1 <= 100 and BENCH_CONFIG.epochs_stage2 <= 100
    ok = acc is not None and acc >= 0.90 and elapsed < 300 and epochs_ok and BENCH_CONFIG.hidden_size == 32
    assert record_criterion(4, "end-to-end synthetic learning", ok,
                            f"held-out accuracy {acc:.4f} on {n_test} sequences, {elapsed:.0f}s")


def test_criterion_4_real_schema_smoke(tmp_path, capsys):
    # Canonical sensor columns, named terrains, uneven lengths and some unlabeled walks.
    samples = synth_generate(SynthSpec(n_sequences=40, t_min=9, t_max=15, seed=21))
    samples += [SequenceSample(f"walk{i}", s.frames) for i, s in
                enumerate(synth_generate(SynthSpec(n_sequences=8, t_min=9, t_max=12, seed=22)))]
    data = tmp_path / "field.csv"
    write_csv(samples, data)
    assert data.read_text().splitlines()[0] == ",".join(csv_header())
    out = tmp_path / "run"
    code_train = main(["train", "--data", str(data), "--out", str(out), "--hidden", "8", "--stage1-epochs", "2",
                       "--stage2-epochs", "3", "--k", "2"])
    code_eval = main(["eval", "--model", str(out / "model.json"), "--data", str(data), "--out", str(tmp_path / "cm.csv")])
    report = capsys.readouterr().out
    ok = code_train == 0 and code_eval == 0 and "accuracy:" in report and (tmp_path / "cm.csv").exists()
    assert ok


def test_criterion_5_adam_oracle():
    params = {"w": np.array([0.0])}
    cfg = AdamConfig(lr=0.005)
    step, _ = adam_step(adam_init(params), params, {"w": np.array([2.0])}, cfg)
    delta = step["w"][0] - params["w"][0]
    still, _ = adam_step(adam_init(params), params, {"w": np.array([0.0])}, cfg)
    ok = abs(delta - (-0.005 * 2 / (2 + 1e-8))) < 1e-9 and still["w"][0] == 0.0
    assert record_criterion(5, "Adam oracle", ok, f"first step {delta:.12f}, zero-gradient step exact")


def test_criterion_6_data_pipeline():
    data = synth_generate(SynthSpec(n_sequences=100, t_min=8, t_max=12, seed=6))
    split = split_semi_supervised(data, seed=6)
    fit = split.predictor_training()
    stats = compute_norm_stats(fit)
    stacked = np.vstack([s.frames for s in apply_normalization(fit, stats)])
    norm_ok = np.all(np.abs(stacked.mean(axis=0)) < 1e-9) and np.all(np.abs(stacked.std(axis=0) - 1) < 1e-9)
    sizes = (len(split.predictor_set), len(split.classifier_train_set), len(split.classifier_val_set))
    folds = kfold_partition(list(range(37)), 5, 1)
    fold_ok = sorted(x for f in folds for x in f) == list(range(37)) and \
        max(map(len, folds)) - min(map(len, folds)) <= 1
    text = to_csv_text(data)
    back = ingest_csv(io.StringIO(text))
    csv_ok = to_csv_text(back) == text and all(np.array_equal(a.frames, b.frames) for a, b in zip(data, back))
    ok = bool(norm_ok) and sizes == (90, 5, 5) and fold_ok and csv_ok
    assert record_criterion(6, "data pipeline", ok,
                            f"normalized={bool(norm_ok)} split={sizes} folds={fold_ok} csv round-trip={csv_ok}")


def test_criterion_7_determinism_and_persistence(tmp_path):
    data = tmp_path / "d.csv"
    main(["synth", "--n", "40", "--seed", "3", "--t-min", "8", "--t-max", "12", "--out", str(data)])
    args = ["--data", str(data), "--hidden", "6", "--stage1-epochs", "2", "--stage2-epochs", "3", "--k", "2", "--seed", "11"]
    main(["train", *args, "--out", str(tmp_path / "a")])
    main(["train", *args, "--out", str(tmp_path / "b")])
    same_file = (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()

    model = load_model(tmp_path / "a" / "model.json")
    path = tmp_path / "again.json"
    save_model(model, path)
    reloaded = load_model(path)
    samples = model.normalize(ingest_csv(data))
    same_pred = all(
        np.array_equal(class_distributions(model, s), class_distributions(reloaded, s))
        and np.array_equal(predict_sequence(model, s)[1], predict_sequence(reloaded, s)[1])
        for s in samples)
    ok = same_file and same_pred and path.read_bytes() == (tmp_path / "a" / "model.json").read_bytes()
    assert record_criterion(7, "determinism and persistence", ok,
                            f"model files identical={same_file}, reload predictions identical={same_pred}")


def test_criterion_8_history_emission(bench_run, tmp_path):
    from terrain_lstm.metrics import emit_history
    run, _ = bench_run
    problems = []
    for name, hist, epochs in (("stage1", run.stage1_history, BENCH_CONFIG.epochs_stage1),
                               ("stage2", run.stage2_history, BENCH_CONFIG.epochs_stage2)):
        path = tmp_path / f"{name}.csv"
        emit_history(hist, path)
        rows = read_history(path)
        if [r.epoch for r in rows] != list(range(1, epochs + 1)):
            problems.append(f"{name} epochs")
        if not all(math.isfinite(r.train_loss) and math.isfinite(r.val_loss) for r in rows):
            problems.append(f"{name} non-finite loss")
        accs = [a for r in rows for a in (r.train_acc, r.val_acc) if a is not None]
        if not all(0.0 <= a <= 1.0 for a in accs):
            problems.append(f"{name} accuracy range")
        if name == "stage2" and len(accs) != 2 * epochs:
            problems.append("stage2 missing accuracies")
    assert record_criterion(8, "history emission", not problems,
                            f"{len(run.stage1_history)} + {len(run.stage2_history)} rows" + (f"; {problems}" if problems else ""))
