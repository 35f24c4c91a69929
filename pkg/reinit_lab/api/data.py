"""Synthetic classification tasks: label-bit vectors and colored-patch images."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from reinit_lab.api import ReinitLabError
from reinit_lab.api.model import Dataset
from reinit_lab.api.numerics import RngStream, Tensor
from reinit_lab.schema import DataKind, SyntheticSpec

if TYPE_CHECKING:
    from pathlib import Path

    from reinit_lab.api.model import Labels

logger = logging.getLogger(__name__)

LABEL_BITS = 3
PATCH_FRACTION = 4


@dataclass(frozen=True)
class SyntheticData:
    """Independent train and test samples of one synthetic task."""

    train: Dataset
    test: Dataset


def encode_labels(labels: Labels, alpha: float) -> Tensor:
    """Encodes labels as their 3-bit binary form, most significant bit first, with 1 -> +alpha and 0 -> -alpha."""
    shifts = np.arange(LABEL_BITS - 1, -1, -1)
    bits = (labels[:, None] >> shifts) & 1
    return np.where(bits == 1, alpha, -alpha)


def _draw_vectors(n: int, spec: SyntheticSpec, rng: RngStream) -> Dataset:
    generator = rng.generator()
    labels = generator.integers(0, spec.n_classes, size=n)
    x = generator.standard_normal((n, spec.dim))
    x[:, :LABEL_BITS] = encode_labels(labels, spec.alpha)
    return Dataset(x, labels.astype(np.int64))


def _draw_images(n: int, spec: SyntheticSpec, rng: RngStream) -> Dataset:
    """Gaussian noise images with one square patch whose channel signs encode the label bits."""
    generator = rng.generator()
    size = spec.image_size
    patch = max(size // PATCH_FRACTION, 1)
    labels = generator.integers(0, spec.n_classes, size=n)
    x = generator.standard_normal((n, LABEL_BITS, size, size))
    corners = generator.integers(0, size - patch + 1, size=(n, 2))
    colors = encode_labels(labels, spec.alpha)
    for i, (top, left) in enumerate(corners):
        x[i, :, top : top + patch, left : left + patch] += colors[i][:, None, None]
    return Dataset(x, labels.astype(np.int64))


def gen_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Generates the train and test samples of a synthetic task.

    Labels are uniform over the 8 classes. For vectors, coordinates 0..2 hold the encoded label and the
    remaining coordinates are i.i.d. standard normal. Train and test come from independent child streams of
    RngStream(spec.seed).

    Args:
        spec: The task description.

    Returns:
        The train and test samples.
    """
    root = RngStream(spec.seed)
    draw = _draw_images if spec.kind is DataKind.IMAGES else _draw_vectors
    data = SyntheticData(
        train=draw(spec.n_train, spec, root.child('train')),
        test=draw(spec.n_test, spec, root.child('test')),
    )
    logger.info(
        'Generated %s task alpha=%g seed=%d: %d train / %d test examples.',
        spec.kind.value,
        spec.alpha,
        spec.seed,
        spec.n_train,
        spec.n_test,
    )
    return data


def _to_frame(dataset: Dataset) -> pd.DataFrame:
    features = dataset.x.reshape(len(dataset), -1)
    frame = pd.DataFrame(features, columns=[f'x{i}' for i in range(features.shape[1])])
    frame.insert(0, 'label', dataset.y)
    return frame


def write_synthetic(data: SyntheticData, directory: Path) -> list[Path]:
    """Writes train.csv and test.csv with a label column followed by the flattened inputs.

    Raises:
        ReinitLabError: If the files cannot be written.
    """
    paths = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for name, dataset in (('train', data.train), ('test', data.test)):
            path = directory / f'{name}.csv'
            _to_frame(dataset).to_csv(path, index=False)
            paths.append(path)
    except OSError as exception:
        raise ReinitLabError(str(exception)) from exception
    return paths
