"""Architecture presets."""

from __future__ import annotations

from reinit_lab.api import ArchitectureError
from reinit_lab.api.layers import Conv2D, Dense, Dropout, FeatureNorm, Flatten, Layer, MaxPool2D, ReLU, SoftmaxHead
from reinit_lab.api.model import Network
from reinit_lab.schema import ArchName, ArchSection, DataKind, SyntheticSpec

MLP_HIDDEN = 32
SCNN_FILTERS = (8, 16)
SCNN_DENSE = 64
POOL = 2


def _mlp_synth(arch: ArchSection, data: SyntheticSpec) -> Network:
    """128 -> Dense 32 + ReLU -> Dense 32 + ReLU -> Dense 8 + softmax, one block per dense layer."""
    blocks: list[list[Layer]] = []
    width = data.dim
    for _ in range(2):
        block: list[Layer] = [Dense(width, MLP_HIDDEN, use_bias=arch.use_bias), ReLU()]
        if arch.dropout > 0:
            block.append(Dropout(arch.dropout))
        blocks.append(block)
        width = MLP_HIDDEN
    blocks.append([Dense(width, data.n_classes, use_bias=arch.use_bias)])
    return Network(
        blocks,
        [SoftmaxHead()],
        input_shape=(data.dim,),
        initializer=arch.initializer,
        fc_boundary=2 if arch.fc_boundary is None else arch.fc_boundary,
        name=arch.name.value,
    )


def _scnn_mini(arch: ArchSection, data: SyntheticSpec) -> Network:
    """Two conv blocks (conv 3x3, FeatureNorm, ReLU, max-pool) and a dense 64 head."""
    size = data.image_size
    if size % (POOL ** len(SCNN_FILTERS)):
        err_msg = f'SCNN_MINI needs an image size divisible by {POOL ** len(SCNN_FILTERS)}, got {size}.'
        raise ArchitectureError(err_msg)
    blocks: list[list[Layer]] = []
    channels = 3
    for filters in SCNN_FILTERS:
        blocks.append(
            [Conv2D(channels, filters, 3, use_bias=arch.use_bias), FeatureNorm(), ReLU(), MaxPool2D(POOL)]
        )
        channels = filters
        size //= POOL
    head: list[Layer] = [
        Flatten(),
        Dense(channels * size * size, SCNN_DENSE, use_bias=arch.use_bias),
        FeatureNorm(),
        ReLU(),
    ]
    if arch.dropout > 0:
        head.append(Dropout(arch.dropout))
    head += [Dense(SCNN_DENSE, data.n_classes, use_bias=arch.use_bias), SoftmaxHead()]
    return Network(
        blocks,
        head,
        input_shape=(3, data.image_size, data.image_size),
        initializer=arch.initializer,
        fc_boundary=arch.fc_boundary,
        name=arch.name.value,
    )


def build_network(arch: ArchSection, data: SyntheticSpec) -> Network:
    """Builds an uninitialized network of the preset matching the data kind.

    Raises:
        ArchitectureError: If the preset does not fit the data kind.
    """
    if arch.name is ArchName.MLP_SYNTH:
        if data.kind is not DataKind.VECTORS:
            err_msg = 'MLP_SYNTH needs vector data.'
            raise ArchitectureError(err_msg)
        return _mlp_synth(arch, data)
    if arch.name is ArchName.SCNN_MINI:
        if data.kind is not DataKind.IMAGES:
            err_msg = 'SCNN_MINI needs image data.'
            raise ArchitectureError(err_msg)
        return _scnn_mini(arch, data)
    err_msg = f'Unknown architecture {arch.name}.'
    raise ArchitectureError(err_msg)
