"""Reinit-Lab commands concerning its version."""

from __future__ import annotations

import click

from reinit_lab.cli import version_id


@click.command
def version() -> None:
    """Displays the version of Reinit-Lab."""
    click.echo(f'{version_id}')
