import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from biounify import numerics as T  # noqa: E402


@pytest.fixture
def f64():
    with T.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TASK_LAYOUT = {"EEG": 2, "ECG": 1, "PPG": 1}


@pytest.fixture(scope="session")
def task_data():
    """Seeded synthetic two-class task split into train / validation / test."""
    from biounify.workbench.synth import make_task

    return (make_task(128, 2, TASK_LAYOUT, seed=1),
            make_task(64, 2, TASK_LAYOUT, seed=2),
            make_task(128, 2, TASK_LAYOUT, seed=3))


@pytest.fixture(scope="session")
def trained_model(task_data):
    """Tiny model fine-tuned in FF mode on ``task_data``; treat as read-only."""
    from biounify import BiosignalModel, TrainConfig, finetune, tiny_config

    train, val, _ = task_data
    model = BiosignalModel(tiny_config(d_model=32))
    model, _ = finetune(model, "FF", train, val, TrainConfig(mode="FF", lr=1e-3, epochs=10, batch_size=16))
    return model


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
