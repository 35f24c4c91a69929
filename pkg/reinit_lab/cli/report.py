"""Reinit-Lab command printing reports over a results directory."""

from __future__ import annotations

from typing import TYPE_CHECKING

import click

from reinit_lab.api.report import ReportKind
from reinit_lab.api.report import report as build_report
from reinit_lab.cli import handle_exception, in_option

if TYPE_CHECKING:
    from pathlib import Path


@click.command
@click.option('--kind', type=click.Choice([kind.value for kind in ReportKind]), required=True)
@in_option
@handle_exception
def report(kind: str, in_dir: Path) -> None:
    """Prints a report and writes its CSV or text artifact into the results directory."""
    click.echo(build_report(in_dir, ReportKind(kind)).render())
