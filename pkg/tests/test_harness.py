"""Tests for matrix expansion, execution, failure recording and budget sweeps."""

from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest

from reinit_lab.api import ConfigError, NumericFailureError, harness
from reinit_lab.api.config import Preset, get_preset
from reinit_lab.api.harness import (
    FLATNESS_FILE,
    MARGINS_FILE,
    RESULTS_COLUMNS,
    SPEED_FILE,
    WEIGHT_SIZE_FILE,
    compute_sweep,
    expand_matrix,
    run_matrix,
)
from reinit_lab.schema import (
    DataSection,
    ExperimentConfig,
    MatrixSection,
    Method,
    OutputSection,
    PlanSection,
    RunStatus,
    TrainConfig,
)


def tiny_config(methods: list[Method], *, diagnostics: bool = False) -> ExperimentConfig:
    output = OutputSection(
        margins=diagnostics, flatness=diagnostics, weight_size=diagnostics, speed=diagnostics, flatness_draws=2
    )
    return ExperimentConfig(
        data=DataSection(n_train=32, n_test=32, dim=8),
        train=TrainConfig(learning_rate=0.05),
        plan=PlanSection(repeats=1, steps_per_round=3, stats_sample_size=16),
        matrix=MatrixSection(methods=methods, alphas=[1.0], seeds=[0, 1]),
        output=output,
    )


def test_table1_matrix_has_one_run_per_cell():
    tasks = expand_matrix(get_preset(Preset.TABLE1))
    assert len(tasks) == 6 * 3 * 20
    assert len({task.run_id for task in tasks}) == len(tasks)
    assert [task.run_id for task in tasks] == sorted(task.run_id for task in tasks)


def test_expansion_applies_axes():
    config = tiny_config([Method.BL, Method.LW])
    config.matrix.penalties = [0.0, 0.01]
    config.matrix.budgets = [5]
    tasks = expand_matrix(config)
    assert len(tasks) == 2 * 2 * 2
    assert {task.config.weight_decay for task in tasks} == {0.0, 0.01}
    assert {task.plan.steps_per_round for task in tasks} == {5}
    assert {task.plan.method for task in tasks} == {Method.BL, Method.LW}
    same_setting = [task for task in tasks if task.seed == 0 and task.config.weight_decay == 0.0]
    assert len({task.setting_key for task in same_setting}) == 1


def test_run_matrix_writes_results_and_diagnostics(tmp_path):
    result = run_matrix(tiny_config([Method.BL, Method.LW], diagnostics=True), tmp_path / 'out')
    assert result.failures == {}
    frame = pd.read_csv(tmp_path / 'out' / 'results.csv')
    assert list(frame.columns) == RESULTS_COLUMNS
    assert len(frame) == 4
    assert (frame['status'] == 'ok').all()
    assert frame['total_steps'].tolist() == [9, 9, 9, 9]
    assert frame['test_acc'].between(0, 1).all()

    run_files = sorted((tmp_path / 'out' / 'runs').glob('*.json'))
    assert [path.stem for path in run_files] == frame['run_id'].tolist()
    record = json.loads(run_files[0].read_text())
    assert record['status'] == 'ok'

    margins = pd.read_csv(tmp_path / 'out' / MARGINS_FILE)
    assert len(margins) == 4 * 32
    flatness = pd.read_csv(tmp_path / 'out' / FLATNESS_FILE)
    assert len(flatness) == 4 * 4 * 2
    assert (flatness[flatness['sigma'] == 0.0]['delta_acc'] == 0.0).all()
    speed = pd.read_csv(tmp_path / 'out' / SPEED_FILE)
    assert len(speed) == 2 * 1 + 2 * 3

    weights = pd.read_csv(tmp_path / 'out' / WEIGHT_SIZE_FILE).merge(frame[['run_id', 'method']], on='run_id')
    baseline = weights[weights['method'] == 'BL']
    assert np.allclose(baseline['ratio_vs_baseline'], 1.0)
    assert weights['ratio_vs_baseline'].notna().all()


def test_run_matrix_is_deterministic(tmp_path):
    config = tiny_config([Method.BL, Method.WELSR])
    run_matrix(config, tmp_path / 'first')
    run_matrix(config, tmp_path / 'second')
    first = pd.read_csv(tmp_path / 'first' / 'results.csv').drop(columns='wall_ms')
    second = pd.read_csv(tmp_path / 'second' / 'results.csv').drop(columns='wall_ms')
    pd.testing.assert_frame_equal(first, second)


def test_failures_are_recorded_and_the_matrix_continues(tmp_path, monkeypatch):
    original = harness.train_method

    def failing(plan, *args, **kwargs):
        if plan.method is Method.LW:
            err_msg = 'loss became nan'
            raise NumericFailureError(err_msg)
        return original(plan, *args, **kwargs)

    monkeypatch.setattr(harness, 'train_method', failing)
    result = run_matrix(tiny_config([Method.BL, Method.LW], diagnostics=True), tmp_path)
    assert len(result.records) == 4
    assert len(result.numeric_failures) == 2
    failed = [record for record in result.records if record.status is RunStatus.FAILED]
    assert {record.plan.method for record in failed} == {Method.LW}
    assert all(record.error is not None and 'nan' in record.error for record in failed)

    frame = pd.read_csv(tmp_path / 'results.csv')
    assert frame[frame['method'] == 'LW']['test_acc'].isna().all()
    assert frame[frame['method'] == 'BL']['test_acc'].notna().all()
    assert len(pd.read_csv(tmp_path / WEIGHT_SIZE_FILE)) == 2


def test_sweep_records_the_budget(tmp_path):
    config = tiny_config([Method.BL])
    config.plan.repeats = 3
    config.matrix.seeds = [0]
    result = compute_sweep(config, [50, 100, 200], tmp_path)
    assert sorted(record.total_steps for record in result.records) == [450, 900, 1800]
    frame = pd.read_csv(tmp_path / 'results.csv')
    assert sorted(frame['budget'].tolist()) == [50, 100, 200]


def test_invalid_budgets_and_workers(tmp_path):
    config = tiny_config([Method.BL])
    with pytest.raises(ConfigError):
        compute_sweep(config, [0], tmp_path)
    with pytest.raises(ConfigError):
        compute_sweep(config, [], tmp_path)
    with pytest.raises(ConfigError):
        run_matrix(config, tmp_path, workers=0)
