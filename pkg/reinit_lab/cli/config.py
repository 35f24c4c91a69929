"""Reinit-Lab commands concerning experiment configs."""

from __future__ import annotations

from pathlib import Path

import click

from reinit_lab.api import get_table_from_dict
from reinit_lab.api.config import Preset, get_config_summary, get_preset, load_config, store_config
from reinit_lab.cli import handle_exception

preset_option = click.option(
    '--preset',
    '-p',
    type=click.Choice([preset.value for preset in Preset]),
    default=Preset.TABLE1.value,
    show_default=True,
    help='Built-in config.',
)


@click.group
def config() -> None:
    """Experiment config presets and validation."""


@config.command(name='show')
@preset_option
@click.option(
    '--file', 'file', type=click.Path(exists=True, dir_okay=False, path_type=Path), help='Show this config instead.'
)
@handle_exception
def config_show(preset: str, file: None | Path) -> None:
    """Shows a preset or a validated config file."""
    experiment = load_config(file) if file is not None else get_preset(Preset(preset))
    click.echo(get_table_from_dict(data=get_config_summary(experiment), key_header='Field'))


@config.command(name='init')
@preset_option
@click.option('--out', 'out', type=click.Path(dir_okay=False, path_type=Path), required=True, help='Target file.')
@click.option('--force', is_flag=True, default=False, help='Overwrite an existing file.')
@handle_exception
def config_init(preset: str, out: Path, *, force: bool) -> None:
    """Writes a preset as a JSON config file."""
    if out.exists() and not force:
        err_msg = f'{out} exists. Use --force to overwrite it.'
        raise click.ClickException(err_msg)
    store_config(get_preset(Preset(preset)), out)
    click.echo(f'Preset {preset} written to {out}.')
