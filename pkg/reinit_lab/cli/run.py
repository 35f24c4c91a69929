"""Reinit-Lab command running an experiment matrix."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import click

from reinit_lab.api import NumericFailureError, ReinitLabError
from reinit_lab.api.config import load_config
from reinit_lab.api.harness import run_matrix
from reinit_lab.cli import handle_exception, out_option, workers_option

if TYPE_CHECKING:
    from reinit_lab.api.harness import MatrixResult


def echo_matrix_result(result: MatrixResult) -> None:
    """Prints where the results went and fails if any run failed.

    Raises:
        NumericFailureError: If a run failed with non-finite numbers.
        ReinitLabError: If a run failed otherwise.
    """
    click.echo(f'{len(result.records)} runs written to {result.directory}.')
    if result.numeric_failures:
        err_msg = f'{len(result.numeric_failures)} run(s) diverged: {", ".join(result.numeric_failures)}'
        raise NumericFailureError(err_msg)
    if result.failures:
        err_msg = f'{len(result.failures)} run(s) failed: {", ".join(result.failures)}'
        raise ReinitLabError(err_msg)


@click.command
@click.option('--config', 'config_file', type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@out_option
@workers_option
@handle_exception
def run(config_file: Path, out: None | Path, workers: int) -> None:
    """Runs every method, setting and seed of a config."""
    echo_matrix_result(run_matrix(load_config(config_file), out, workers))
