import json
import subprocess
import sys
import time

import pytest

from terrain_lstm.cli import main
from terrain_lstm.data import ingest_csv, write_csv
from terrain_lstm.metrics import read_history
from terrain_lstm.persist import save_model

FAST = ["--hidden", "6", "--stage1-epochs", "2", "--stage2-epochs", "3", "--batch", "8", "--k", "1"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d.csv"
    assert main(["synth", "--n", "48", "--seed", "7", "--t-min", "12", "--t-max", "18", "--out", str(path)]) == 0
    return path


def test_synth_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["synth", "--n", "60", "--seed", "7", "--out", str(a)]) == 0
    assert main(["synth", "--n", "60", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    samples = ingest_csv(a)
    assert len(samples) == 60 and {s.label for s in samples} == set(range(6))


def test_synth_config_file(tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"n_sequences": 12, "t_min": 5, "t_max": 6, "dim": 4}))
    out = tmp_path / "s.csv"
    assert main(["synth", "--config", str(cfg), "--seed", "3", "--out", str(out)]) == 0
    assert ingest_csv(out, n_features=None)[0].dim == 4


def test_synth_too_few_sequences(tmp_path, capsys):
    assert main(["synth", "--n", "3", "--out", str(tmp_path / "x.csv")]) == 3
    assert "class_count" in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


def test_train_outputs_and_determinism(dataset, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--data", str(dataset), "--out", str(a), "--seed", "4", *FAST]) == 0
    assert main(["train", "--data", str(dataset), "--out", str(b), "--seed", "4", *FAST]) == 0
    for name in ("model.json", "history_stage1.csv", "history_stage2.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["config"]["hidden_size"] == 6
    assert manifest["split"] == {"predictor": 44, "classifier_train": 2, "classifier_val": 2, "test": 4}
    assert len(manifest["dataset"]["sha256"]) == 64
    assert len(read_history(a / "history_stage1.csv")) == 2
    assert len(read_history(a / "history_stage2.csv")) == 3


def test_train_seed_changes_model(dataset, tmp_path):
    main(["train", "--data", str(dataset), "--out", str(tmp_path / "a"), "--seed", "1", *FAST])
    main(["train", "--data", str(dataset), "--out", str(tmp_path / "b"), "--seed", "2", *FAST])
    assert (tmp_path / "a" / "model.json").read_bytes() != (tmp_path / "b" / "model.json").read_bytes()


def test_train_config_file_and_flag_precedence(dataset, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": str(dataset), "out": str(tmp_path / "o"), "hidden": 4, "lambda": 0.001,
                               "stage1-epochs": 1, "stage2_epochs": 1, "k": 1, "input-relu": False}))
    assert main(["train", "--config", str(cfg), "--hidden", "3"]) == 0
    config = json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]
    assert config["hidden_size"] == 3 and config["lam"] == 0.001 and config["input_relu"] is False


def test_train_rejects_unknown_config_key(dataset, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"hiden": 4}))
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(tmp_path / "o")]) == 1


def test_train_without_labels_fails_before_training(tmp_path, capsys):
    data = [s.__class__(s.id, s.frames) for s in small_synth(30)]
    path = tmp_path / "u.csv"
    write_csv(data, path)
    start = time.perf_counter()
    code = main(["train", "--data", str(path), "--out", str(tmp_path / "o"), "--k", "5"])
    assert code == 3 and time.perf_counter() - start < 5
    assert "label" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def small_synth(n):
    from terrain_lstm.synth import SynthSpec, synth_generate
    return synth_generate(SynthSpec(n_sequences=n, t_min=6, t_max=8, seed=0))


def test_train_missing_file(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 2


def test_usage_errors(tmp_path):
    assert main(["train", "--data", "x.csv"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["train", "--hidden", "many"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_eval_report_is_deterministic(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    main(["train", "--data", str(dataset), "--out", str(run), *FAST])
    capsys.readouterr()
    assert main(["eval", "--model", str(run / "model.json"), "--data", str(dataset), "--out", str(tmp_path / "cm1.csv")]) == 0
    first = capsys.readouterr().out
    assert main(["eval", "--model", str(run / "model.json"), "--data", str(dataset), "--out", str(tmp_path / "cm2.csv")]) == 0
    assert capsys.readouterr().out == first
    assert "accuracy:" in first and "confusion matrix" in first
    assert (tmp_path / "cm1.csv").read_bytes() == (tmp_path / "cm2.csv").read_bytes()


def test_eval_dimension_mismatch(dataset, tmp_path, capsys):
    run = tmp_path / "run"
    main(["train", "--data", str(dataset), "--out", str(run), *FAST])
    narrow = tmp_path / "narrow.csv"
    main(["synth", "--n", "12", "--dim", "5", "--out", str(narrow)])
    capsys.readouterr()
    assert main(["eval", "--model", str(run / "model.json"), "--data", str(narrow)]) == 2
    err = capsys.readouterr().err
    assert "5" in err and "22" in err


def test_eval_corrupt_model(dataset, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "terrain-lstm-model", "version": "1", "gate_')
    assert main(["eval", "--model", str(bad), "--data", str(dataset)]) == 2


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "classify" in out and "predict" in out
    assert main(["gradcheck", "--lambda", "0"]) == 0
    assert main(["gradcheck", "--corrupt", "0.01"]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_training_data_accuracy_not_below_held_out(bench_run, tmp_path, capsys):
    run, _ = bench_run
    model_path = tmp_path / "bench.json"
    save_model(run.model, model_path)
    train_csv = tmp_path / "train.csv"
    write_csv(run.split.classifier_train_set, train_csv)
    capsys.readouterr()
    assert main(["eval", "--model", str(model_path), "--data", str(train_csv)]) == 0
    line = next(l for l in capsys.readouterr().out.splitlines() if l.startswith("accuracy:"))
    assert float(line.split()[1]) >= run.test_accuracy


def test_medium_run_within_budget(tmp_path):
    data = tmp_path / "d.csv"
    main(["synth", "--n", "120", "--seed", "1", "--out", str(data)])
    start = time.perf_counter()
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "o"), "--hidden", "16",
                 "--stage1-epochs", "5", "--stage2-epochs", "20", "--batch", "8", "--k", "3"]) == 0
    assert time.perf_counter() - start < 120


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "terrain_lstm", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
