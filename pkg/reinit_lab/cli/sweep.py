"""Reinit-Lab command running a compute-budget sweep."""

from __future__ import annotations

from pathlib import Path

import click

from reinit_lab.api import ConfigError
from reinit_lab.api.config import load_config
from reinit_lab.api.harness import compute_sweep
from reinit_lab.cli import handle_exception, out_option, workers_option
from reinit_lab.cli.run import echo_matrix_result


def parse_budgets(value: str) -> list[int]:
    """Parses a comma separated list of steps-per-round budgets.

    Raises:
        ConfigError: If an entry is not an integer.
    """
    try:
        return [int(part) for part in value.split(',') if part.strip()]
    except ValueError as exception:
        err_msg = f'Budgets must be comma separated integers, got {value!r}.'
        raise ConfigError(err_msg) from exception


@click.command
@click.option('--config', 'config_file', type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option('--budgets', type=str, required=True, help='Steps per round, e.g. 50,100,200.')
@out_option
@workers_option
@handle_exception
def sweep(config_file: Path, budgets: str, out: None | Path, workers: int) -> None:
    """Runs a config once per steps-per-round budget."""
    echo_matrix_result(compute_sweep(load_config(config_file), parse_budgets(budgets), out, workers))
