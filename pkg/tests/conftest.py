"""Shared fixtures; the session-scoped toy training run feeds several suites."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

from sgcn import SgcnModel, SynthSpec, TrainConfig, small_config, synth_dataset, train
from sgcn.training import checkpoint_save, metrics_csv

ARTIFACTS = Path(__file__).resolve().parent.parent / ".artifacts"

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion_report():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def _report(criterion: int, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line, flush=True)
        _ACCEPTANCE_LINES.append(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """Full toy training: 10 classes, 2500 samples (2000/500 split), seed 7.

    Trains once per session; the checkpoint is also written to .artifacts/
    so the frontend end-to-end test can serve it.
    """
    dataset = synth_dataset(SynthSpec(num_classes=10, samples_per_class=250), seed=7)
    config = small_config(10)
    model = SgcnModel(config, rng=np.random.default_rng(np.random.SeedSequence([7, 0x1a2b])))
    tc = TrainConfig(batch_size=128, max_epochs=14, seed=7, eval_fraction=0.2)
    t0 = time.monotonic()
    result = train(model, dataset, tc)
    elapsed = time.monotonic() - t0

    ARTIFACTS.mkdir(exist_ok=True)
    ckpt = ARTIFACTS / "toy.ckpt"
    checkpoint_save(ckpt, result.model,
                    extra={"class_names": dataset.class_names,
                           "best_accuracy": result.best_accuracy})
    (ARTIFACTS / "toy_metrics.csv").write_text(metrics_csv(result.history))
    return {"result": result, "model": result.model, "config": config,
            "checkpoint": ckpt, "elapsed": elapsed, "dataset": dataset}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
