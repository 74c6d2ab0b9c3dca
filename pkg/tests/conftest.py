import time

import numpy as np
import pytest

from terrain_lstm.data import SequenceSample, apply_normalization, compute_norm_stats
from terrain_lstm.pipeline import TrainConfig, freeze_stage1, run_training, train_stage1, train_stage2
from terrain_lstm.synth import SynthSpec, synth_generate

# Scaled-down settings for the 300-sequence synthetic benchmark.
BENCH_CONFIG = TrainConfig(hidden_size=32, stage1_epochs=20, stage2_epochs=100, batch_size=4, seed=0, k=5)
BENCH_DATA = SynthSpec(n_sequences=300, t_min=40, t_max=80, seed=0)


@pytest.fixture(scope="session")
def bench_run():
    """One full training run on the synthetic benchmark, shared across tests."""
    samples = synth_generate(BENCH_DATA)
    start = time.perf_counter()
    run = run_training(samples, BENCH_CONFIG)
    return run, time.perf_counter() - start


@pytest.fixture(scope="session")
def small_data():
    return synth_generate(SynthSpec(n_sequences=24, t_min=10, t_max=16, seed=3))


@pytest.fixture(scope="session")
def small_model(small_data):
    """A tiny trained model plus the normalized data it was trained on."""
    cfg = TrainConfig(hidden_size=6, stage1_epochs=2, stage2_epochs=3, batch_size=8, seed=1, k=1)
    norm = compute_norm_stats(small_data)
    normed = apply_normalization(small_data, norm)
    model, h1 = train_stage1(normed, cfg, norm=norm)
    freeze_stage1(model)
    model, h2 = train_stage2(model, normed[:12], normed[12:18], cfg)
    return model, normed, h1, h2


def make_sample(sid, frames, label=None):
    return SequenceSample(sid, np.asarray(frames, dtype=float), label)


ACCEPTANCE_RESULTS = {}


def record_criterion(number, title, passed, detail=""):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
