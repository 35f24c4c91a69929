"""Reinit-Lab command verifying the backward pass of a preset."""

from __future__ import annotations

import click

from reinit_lab.api import NumericFailureError
from reinit_lab.api.data import gen_synthetic
from reinit_lab.api.model import Loss
from reinit_lab.api.numerics import RngStream, finite_diff_gradcheck
from reinit_lab.api.presets import build_network
from reinit_lab.cli import handle_exception
from reinit_lab.schema import ArchName, ArchSection, DataKind, SyntheticSpec

BATCH_SIZE = 16


@click.command
@click.option('--arch', type=click.Choice([name.value for name in ArchName]), default=ArchName.MLP_SYNTH.value)
@click.option('--epsilon', type=click.FloatRange(0, 1e-2, min_open=True), default=1e-5, show_default=True)
@click.option('--tolerance', type=click.FloatRange(min=0, min_open=True), default=1e-4, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--squared', is_flag=True, default=False, help='Check the squared loss instead of cross-entropy.')
@handle_exception
def gradcheck(arch: str, epsilon: float, tolerance: float, seed: int, *, squared: bool) -> None:  # noqa: PLR0913
    """Compares reverse-mode gradients with central differences on a random batch."""
    name = ArchName(arch)
    kind = DataKind.IMAGES if name is ArchName.SCNN_MINI else DataKind.VECTORS
    spec = SyntheticSpec(kind=kind, n_train=BATCH_SIZE, n_test=1, seed=seed)
    network = build_network(ArchSection(name=name), spec)
    network.initialize(RngStream(seed).child('init'))
    loss = Loss.SQUARED if squared else Loss.CROSS_ENTROPY
    batch = gen_synthetic(spec).train
    error = finite_diff_gradcheck(network, batch, epsilon, RngStream(seed).child('probe'), loss=loss)
    click.echo(f'{name.value}: max relative error {error:.3e} over d={network.params.d} parameters.')
    if error > tolerance:
        err_msg = f'Gradient check failed: {error:.3e} > {tolerance:.1e}.'
        raise NumericFailureError(err_msg)
