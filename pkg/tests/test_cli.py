"""Tests for the command line interface and its exit codes."""

from __future__ import annotations

import pandas as pd
import pytest
from click.testing import CliRunner

from reinit_lab.api import NumericFailureError, harness
from reinit_lab.api.config import store_config
from reinit_lab.cli import cli, version_id
from reinit_lab.schema import DataSection, ExperimentConfig, MatrixSection, Method, PlanSection


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def tiny_config_file(tmp_path):
    config = ExperimentConfig(
        data=DataSection(n_train=16, n_test=16, dim=6),
        plan=PlanSection(repeats=1, steps_per_round=2, stats_sample_size=8),
        matrix=MatrixSection(methods=[Method.BL, Method.LW], alphas=[1.0], seeds=[0]),
    )
    path = tmp_path / 'config.json'
    store_config(config, path)
    return path


def test_commands_are_discovered(runner):
    result = runner.invoke(cli, ['--help'])
    assert result.exit_code == 0
    for command in ('analyze', 'config', 'gen', 'gradcheck', 'report', 'run', 'sweep', 'version'):
        assert command in result.output


def test_version(runner):
    result = runner.invoke(cli, ['version'])
    assert result.exit_code == 0
    assert result.output.strip() == version_id


def test_config_init_and_show(runner, tmp_path):
    target = tmp_path / 'table3.json'
    result = runner.invoke(cli, ['config', 'init', '--preset', 'table3', '--out', str(target)])
    assert result.exit_code == 0
    assert target.is_file()
    assert runner.invoke(cli, ['config', 'init', '--out', str(target)]).exit_code == 1
    assert runner.invoke(cli, ['config', 'init', '--out', str(target), '--force']).exit_code == 0

    result = runner.invoke(cli, ['config', 'show', '--file', str(target)])
    assert result.exit_code == 0
    assert 'matrix.methods' in result.output


def test_malformed_config_exits_with_2(runner, tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text('{"matrix": {"methods": ["BL"], "alphas": "many"}}')
    result = runner.invoke(cli, ['config', 'show', '--file', str(path)])
    assert result.exit_code == 2
    assert 'matrix.alphas' in result.output


def test_usage_error_exits_with_2(runner, tmp_path):
    assert runner.invoke(cli, ['report', '--in', str(tmp_path)]).exit_code == 2


def test_gen(runner, tmp_path):
    args = ['gen', '--alpha', '2', '--out', str(tmp_path / 'data'), '--n-train', '5', '--n-test', '3']
    result = runner.invoke(cli, args)
    assert result.exit_code == 0
    assert len(pd.read_csv(tmp_path / 'data' / 'train.csv')) == 5
    assert len(pd.read_csv(tmp_path / 'data' / 'test.csv')) == 3


def test_gradcheck(runner):
    result = runner.invoke(cli, ['gradcheck'])
    assert result.exit_code == 0
    assert 'max relative error' in result.output
    assert runner.invoke(cli, ['gradcheck', '--tolerance', '1e-300']).exit_code == 3


def test_run_report_and_analyze(runner, tmp_path, tiny_config_file):
    out = tmp_path / 'out'
    result = runner.invoke(cli, ['run', '--config', str(tiny_config_file), '--out', str(out)])
    assert result.exit_code == 0
    assert len(pd.read_csv(out / 'results.csv')) == 2

    result = runner.invoke(cli, ['report', '--kind', 'table1', '--in', str(out)])
    assert result.exit_code == 0
    assert (out / 'table1.csv').is_file()

    result = runner.invoke(cli, ['analyze', '--in', str(out), '--min-leaf', '1'])
    assert result.exit_code == 0
    assert (out / 'significance.csv').is_file()
    assert (out / 'tree.txt').is_file()


def test_numeric_failure_exits_with_3(runner, tmp_path, tiny_config_file, monkeypatch):
    def diverging(*args, **kwargs):  # noqa: ARG001
        err_msg = 'loss became inf'
        raise NumericFailureError(err_msg)

    monkeypatch.setattr(harness, 'train_method', diverging)
    out = tmp_path / 'out'
    result = runner.invoke(cli, ['run', '--config', str(tiny_config_file), '--out', str(out)])
    assert result.exit_code == 3
    assert 'diverged' in result.output
    assert (out / 'results.csv').is_file()


def test_sweep_rejects_malformed_budgets(runner, tmp_path, tiny_config_file):
    args = ['sweep', '--config', str(tiny_config_file), '--budgets', '10,x', '--out', str(tmp_path)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 2


def test_report_on_empty_results_exits_with_2(runner, tmp_path):
    (tmp_path / 'results.csv').write_text('')
    result = runner.invoke(cli, ['report', '--kind', 'table1', '--in', str(tmp_path)])
    assert result.exit_code == 2
