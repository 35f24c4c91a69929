"""Post-hoc measurements of trained networks: softmax margins, weight size, flatness and round speed."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy import stats

from reinit_lab.api import ContractViolationError
from reinit_lab.api.model import Mode, accuracy, compute_loss, layer_input, margins_of, predict
from reinit_lab.api.numerics import RngStream, Tensor, frobenius_norm

if TYPE_CHECKING:
    from collections.abc import Sequence

    from reinit_lab.api.model import Dataset, Network, TrainTrace

logger = logging.getLogger(__name__)

DEFAULT_SMALLEST_MARGINS = 400


@dataclass(frozen=True)
class MarginReport:
    """Per-example softmax margins sorted in ascending order."""

    margins: Tensor
    m: int = DEFAULT_SMALLEST_MARGINS

    @property
    def smallest(self) -> Tensor:
        """The m smallest margins."""
        return self.margins[: self.m]


def softmax_margins(network: Network, dataset: Dataset, m: int = DEFAULT_SMALLEST_MARGINS) -> MarginReport:
    """Eval-mode softmax margins of every example of a dataset."""
    return MarginReport(margins=np.sort(margins_of(predict(network, dataset.x), dataset.y)), m=m)


@dataclass(frozen=True)
class WeightSizeReport:
    """Weight-size measures of a network.

    Attributes:
        frob_product: Product of the squared Frobenius norms of all weight tensors, biases excluded.
        head_measure: Norm of the activations entering the last dense layer on a fixed sample times the norm of
            that layer's weight.
        ratio_vs_baseline: head_measure relative to the baseline run of the same setting and seed.
    """

    frob_product: float
    head_measure: float
    ratio_vs_baseline: None | float = None

    def with_baseline(self, baseline: WeightSizeReport) -> WeightSizeReport:
        """Gets a copy carrying the ratio to a baseline report; the ratio stays None for a zero baseline."""
        ratio = self.head_measure / baseline.head_measure if baseline.head_measure > 0 else None
        return WeightSizeReport(self.frob_product, self.head_measure, ratio)


def weight_size(network: Network, sample_x: Tensor) -> WeightSizeReport:
    """Measures the weight size of a network on a fixed sample of training inputs."""
    params = network.params
    frob_product = math.prod(
        frobenius_norm(params.view(segment)) ** 2 for segment in params.segments if segment.is_weight
    )
    head = network.last_dense()
    activations = layer_input(network, sample_x, head)
    head_measure = frobenius_norm(activations) * frobenius_norm(head.params['weight'])
    return WeightSizeReport(frob_product=frob_product, head_measure=head_measure)


@dataclass(frozen=True)
class FlatnessPoint:
    """Signed changes of training accuracy and loss under Gaussian perturbations of one scale."""

    sigma_noise: float
    delta_acc: float
    delta_acc_stderr: float
    delta_loss: float
    delta_loss_stderr: float
    draws_acc: tuple[float, ...]
    draws_loss: tuple[float, ...]


@dataclass(frozen=True)
class FlatnessCurve:
    """Flatness points sorted by noise scale."""

    n_draws: int
    points: list[FlatnessPoint] = field(default_factory=list)


def _stderr(values: Sequence[float]) -> float:
    if len(values) < 2:  # noqa: PLR2004
        return 0.0
    return float(stats.sem(values))


def flatness_curve(
    network: Network, train_data: Dataset, sigmas: Sequence[float], n_draws: int, rng: RngStream
) -> FlatnessCurve:
    """Measures the change of training accuracy and loss under perturbations w + xi, xi ~ N(0, sigma^2 I).

    All trainable parameters are perturbed. The parameters are restored bitwise after every draw, also when an
    evaluation fails. The network must not be used concurrently while the curve is computed.

    Args:
        network: The trained network.
        train_data: The training examples.
        sigmas: Noise scales; must include 0.
        n_draws: Draws per scale.
        rng: The noise stream; scale i draws from child i.

    Returns:
        The curve.

    Raises:
        ContractViolationError: If sigmas miss 0, hold a negative scale, or n_draws < 1.
    """
    if 0 not in sigmas or any(sigma < 0 for sigma in sigmas) or n_draws < 1:
        err_msg = f'Flatness needs non-negative sigmas including 0 and n_draws >= 1, got {list(sigmas)}, {n_draws}.'
        raise ContractViolationError(err_msg)

    flat = network.params.flat
    saved = flat.copy()
    base_acc = accuracy(network, train_data)
    base_loss = compute_loss(network, train_data, mode=Mode.EVAL)
    points = []
    for index, sigma in enumerate(sorted(sigmas)):
        deltas_acc: list[float] = []
        deltas_loss: list[float] = []
        if sigma == 0:
            deltas_acc = [0.0] * n_draws
            deltas_loss = [0.0] * n_draws
        else:
            generator = rng.child(index).generator()
            for _ in range(n_draws):
                flat += generator.normal(0.0, sigma, size=flat.shape)
                try:
                    deltas_acc.append(accuracy(network, train_data) - base_acc)
                    deltas_loss.append(compute_loss(network, train_data, mode=Mode.EVAL) - base_loss)
                finally:
                    flat[...] = saved
        points.append(
            FlatnessPoint(
                sigma_noise=float(sigma),
                delta_acc=float(np.mean(deltas_acc)),
                delta_acc_stderr=_stderr(deltas_acc),
                delta_loss=float(np.mean(deltas_loss)),
                delta_loss_stderr=_stderr(deltas_loss),
                draws_acc=tuple(deltas_acc),
                draws_loss=tuple(deltas_loss),
            )
        )
        logger.debug('Flatness at sigma %g: delta acc %.4f.', sigma, points[-1].delta_acc)
    return FlatnessCurve(n_draws=n_draws, points=points)


def round_speed(traces: Sequence[TrainTrace], threshold: float) -> list[None | int]:
    """First step of every round at which the training accuracy reaches the threshold; None marks unreached.

    Raises:
        ContractViolationError: If the threshold is outside [0, 1].
    """
    if not 0 <= threshold <= 1:
        err_msg = f'Accuracy thresholds must lie in [0, 1], got {threshold}.'
        raise ContractViolationError(err_msg)
    return [trace.steps_to_threshold(threshold) for trace in traces]
