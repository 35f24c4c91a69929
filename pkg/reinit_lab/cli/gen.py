"""Reinit-Lab command generating synthetic data."""

from __future__ import annotations

from pathlib import Path

import click

from reinit_lab.api import get_table_from_dict
from reinit_lab.api.data import gen_synthetic, write_synthetic
from reinit_lab.cli import handle_exception
from reinit_lab.schema import DataKind, SyntheticSpec


@click.command
@click.option('--alpha', type=click.FloatRange(min=0, min_open=True), default=1.0, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--out', 'out', type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option('--n-train', type=click.IntRange(min=1), default=256, show_default=True)
@click.option('--n-test', type=click.IntRange(min=1), default=2048, show_default=True)
@click.option('--images', is_flag=True, default=False, help='Generate 16x16 colored-patch images.')
@handle_exception
def gen(alpha: float, seed: int, out: Path, n_train: int, n_test: int, *, images: bool) -> None:  # noqa: PLR0913
    """Generates a synthetic task and writes train.csv and test.csv."""
    spec = SyntheticSpec(
        kind=DataKind.IMAGES if images else DataKind.VECTORS, alpha=alpha, n_train=n_train, n_test=n_test, seed=seed
    )
    paths = write_synthetic(gen_synthetic(spec), out)
    click.echo(get_table_from_dict({path.name: str(path) for path in paths}, key_header='File', value_header='Path'))
