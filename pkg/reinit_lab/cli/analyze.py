"""Reinit-Lab command running the meta-analysis."""

from __future__ import annotations

from typing import TYPE_CHECKING

import click

from reinit_lab.api import ResultsContext
from reinit_lab.api.report import significance_report, tree_report
from reinit_lab.cli import handle_exception, in_option

if TYPE_CHECKING:
    from pathlib import Path


@click.command
@in_option
@click.option('--alpha', type=click.FloatRange(0, 1, min_open=True), default=0.05, show_default=True)
@click.option('--min-leaf', type=click.IntRange(min=1), default=7, show_default=True)
@click.option('--max-depth', type=click.IntRange(min=0), default=4, show_default=True)
@handle_exception
def analyze(in_dir: Path, alpha: float, min_leaf: int, max_depth: int) -> None:
    """Writes significance.csv and tree.txt for a results directory."""
    context = ResultsContext(in_dir)
    for result in (significance_report(context, alpha), tree_report(context, min_leaf, max_depth)):
        click.echo(result.render())
        click.echo('')
