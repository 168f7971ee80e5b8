#!/usr/bin/env python3
"""
Desk-scale acceptance experiments.

These train full teachers on three LQ synthetic domains and take tens of
minutes of CPU; they are deselected by default. Run them with::

    pytest -m slow tests/test_acceptance.py
"""

from pathlib import Path

import pytest

from fretal.adapt import TrainingTrace
from fretal.config import Method, load_experiment_config
from fretal.experiment import load_datasets, run_experiment, train_or_load_teacher
from fretal.metrics import zero_shot_matrix
from fretal.reporting import MEAN_SEED, check_acceptance, summary_frame

EXPERIMENT_CONFIG = Path(__file__).parent.parent / "data" / "experiment.json"
PAIRS = [["blend", "tint"], ["tint", "ripple"]]

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def output_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def grid(output_dir):
    config = load_experiment_config(EXPERIMENT_CONFIG, {"output_dir": str(output_dir), "pairs": PAIRS})
    return run_experiment(config)


def test_zero_shot_gap(output_dir):
    config = load_experiment_config(EXPERIMENT_CONFIG, {"output_dir": str(output_dir)})
    datasets = load_datasets(config)
    teachers = {
        name: train_or_load_teacher(config, dataset, output_dir)[0] for name, dataset in datasets.items()
    }
    matrix = zero_shot_matrix(teachers, datasets)
    assert check_acceptance(summary_frame([]), matrix, config.acceptance) == []


def test_fretal_resists_forgetting(grid):
    assert check_acceptance(grid.summary, grid.zero_shot) == []


def test_kd_alone_does_not_beat_fretal(grid):
    means = grid.summary[grid.summary["seed"] == MEAN_SEED].set_index(["source", "target", "method"])
    for source, target in PAIRS:
        fretal = means.loc[(source, target, Method.FRETAL.value), "avg_f1"]
        kd = means.loc[(source, target, Method.KD.value), "avg_f1"]
        assert kd <= fretal


def test_no_adaptation_read_source_data(grid):
    assert (grid.summary["status"] == "ok").all()
    traces = list((grid.output_dir / "cells").rglob("trace.jsonl"))
    assert len(traces) == len(PAIRS) * 3 * 3
    assert all(TrainingTrace.read(path).source_samples_seen == 0 for path in traces)
