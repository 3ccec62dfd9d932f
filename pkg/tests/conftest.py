"""Shared fixtures: desk-scale datasets and trained VAEs, built once per session."""

import numpy as np
import pytest

from tactile_vae.sim import SensorModel, generate_dataset, grid_for
from tactile_vae.vae import TrainConfig, train_vae

DATA_SEED = 1
TRAIN_SEED = 0
DESK_HIDDEN = 128
DESK_EPOCHS = 50

_datasets = {}
_models = {}
ACCEPTANCE_LINES = []


def desk_dataset(kind, archetype):
    key = (kind, archetype)
    if key not in _datasets:
        _datasets[key] = generate_dataset(kind, SensorModel.default(archetype), grid_for(kind, "desk"), seed=DATA_SEED)
    return _datasets[key]


def desk_model(kind, archetype):
    """(model, loss history) for the desk preset: hidden width 128, 50 epochs."""
    key = (kind, archetype)
    if key not in _models:
        cfg = TrainConfig.for_archetype(archetype, hidden_width=DESK_HIDDEN, epochs=DESK_EPOCHS, seed=TRAIN_SEED)
        _models[key] = train_vae(desk_dataset(kind, archetype).frames, cfg)
    return _models[key]


@pytest.fixture
def report_criterion():
    """Record a one-line verdict for an acceptance criterion, then assert it."""

    def report(number, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(ACCEPTANCE_LINES[-1])
        assert ok, detail

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
