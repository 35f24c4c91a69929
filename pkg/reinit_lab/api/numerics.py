"""Dense float64 tensor helpers, seeded random streams, initializers and gradient verification."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, TypeAlias

import numpy as np
import numpy.typing as npt

from reinit_lab.api import ArchitectureError, ContractViolationError, NumericFailureError
from reinit_lab.schema import Initializer

if TYPE_CHECKING:
    from collections.abc import Sequence

    from reinit_lab.api.model import Dataset, Loss, Network

logger = logging.getLogger(__name__)

Tensor: TypeAlias = npt.NDArray[np.float64]

MASK64 = (1 << 64) - 1
GRADCHECK_MIN_PARAMS = 200
GRADCHECK_MAX_EPSILON = 1e-2


def _splitmix64(value: int) -> int:
    value = (value + 0x9E3779B97F4A7C15) & MASK64
    value = ((value ^ (value >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    value = ((value ^ (value >> 27)) * 0x94D049BB133111EB) & MASK64
    return value ^ (value >> 31)


def _key_to_int(key: int | str) -> int:
    if isinstance(key, str):
        return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), 'little')
    return key & MASK64


def mix_stream_id(stream_id: int, key: int | str) -> int:
    """Derives a child stream id.

    The child id is splitmix64(stream_id XOR splitmix64(key)), where string keys are first hashed to 64 bits
    with BLAKE2b. The function is stable across platforms and Python processes.

    Args:
        stream_id: The parent stream id.
        key: Integer or string label of the child stream.

    Returns:
        The child stream id.
    """
    return _splitmix64((stream_id & MASK64) ^ _splitmix64(_key_to_int(key)))


@dataclass(frozen=True)
class RngStream:
    """An immutable handle of a reproducible random stream.

    Every call of generator() starts the same draw sequence: a Philox counter-based bit generator keyed by a
    numpy SeedSequence with entropy master_seed and spawn key (stream_id,). Independent streams are obtained
    through child().
    """

    master_seed: int
    stream_id: int = 0

    def child(self, key: int | str) -> RngStream:
        """Gets an independent child stream.

        Args:
            key: Integer or string label of the child.

        Returns:
            The child stream.
        """
        return RngStream(master_seed=self.master_seed, stream_id=mix_stream_id(self.stream_id, key))

    def generator(self) -> np.random.Generator:
        """Creates a fresh generator positioned at the start of this stream.

        Returns:
            The numpy generator.
        """
        seed_sequence = np.random.SeedSequence(entropy=self.master_seed & MASK64, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seed_sequence))


def ensure_finite(tensor: Tensor | float, what: str) -> None:
    """Raises a NumericFailureError if the value holds NaN or Inf entries.

    Args:
        tensor: Array or scalar to check.
        what: Description used in the error message.
    """
    if not np.all(np.isfinite(tensor)):
        err_msg = f'Non-finite values encountered in {what}.'
        raise NumericFailureError(err_msg)


def matmul(left: Tensor, right: Tensor) -> Tensor:
    """Matrix product with an explicit shape contract [a, b] x [b, c] -> [a, c].

    Raises:
        ArchitectureError: If the operands are not matrices with matching inner dimensions.
    """
    if left.ndim != 2 or right.ndim != 2 or left.shape[1] != right.shape[0]:  # noqa: PLR2004
        err_msg = f'Cannot multiply tensors of shapes {list(left.shape)} and {list(right.shape)}.'
        raise ArchitectureError(err_msg)
    return left @ right


def frobenius_norm(tensor: Tensor) -> float:
    """Frobenius norm of a tensor of any rank."""
    return float(np.linalg.norm(tensor.ravel()))


def he_normal_init(fan_in: int, shape: Sequence[int], rng: RngStream) -> Tensor:
    """Draws i.i.d. Normal(0, sqrt(2 / fan_in)) entries.

    Args:
        fan_in: Number of inputs feeding one output unit.
        shape: Shape of the tensor to draw.
        rng: The random stream.

    Returns:
        The drawn tensor.

    Raises:
        ArchitectureError: If fan_in is not positive.
    """
    if fan_in < 1:
        err_msg = f'He initialization needs a positive fan_in, got {fan_in}.'
        raise ArchitectureError(err_msg)
    return rng.generator().normal(0.0, math.sqrt(2.0 / fan_in), size=tuple(shape))


def xavier_uniform_init(fan_in: int, fan_out: int, shape: Sequence[int], rng: RngStream) -> Tensor:
    """Draws i.i.d. Uniform(-L, L) entries with L = sqrt(6 / (fan_in + fan_out)).

    Args:
        fan_in: Number of inputs feeding one output unit.
        fan_out: Number of outputs fed by one input unit.
        shape: Shape of the tensor to draw.
        rng: The random stream.

    Returns:
        The drawn tensor.

    Raises:
        ArchitectureError: If a fan is not positive.
    """
    if fan_in < 1 or fan_out < 1:
        err_msg = f'Xavier initialization needs positive fans, got fan_in={fan_in}, fan_out={fan_out}.'
        raise ArchitectureError(err_msg)
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.generator().uniform(-limit, limit, size=tuple(shape))


def initialize(initializer: Initializer, fan_in: int, fan_out: int, shape: Sequence[int], rng: RngStream) -> Tensor:
    """Draws a weight tensor with the configured initializer."""
    if initializer is Initializer.HE_NORMAL:
        return he_normal_init(fan_in, shape, rng)
    if initializer is Initializer.XAVIER_UNIFORM:
        return xavier_uniform_init(fan_in, fan_out, shape, rng)
    err_msg = f'Unknown initializer {initializer}.'
    raise ArchitectureError(err_msg)


def finite_diff_gradcheck(  # noqa: PLR0913
    network: Network,
    batch: Dataset,
    epsilon: float,
    rng: None | RngStream = None,
    *,
    n_params: int = GRADCHECK_MIN_PARAMS,
    weight_decay: float = 0.0,
    loss: None | Loss = None,
) -> float:
    """Compares reverse-mode gradients against central finite differences.

    The network is evaluated in eval mode so that dropout does not change the objective between evaluations.
    Parameters are restored bitwise after every probe.

    Args:
        network: The network to check.
        batch: Inputs and labels.
        epsilon: Finite-difference step in (0, 1e-2].
        rng: Stream selecting the probed parameters. Defaults to RngStream(0).
        n_params: Number of probed parameters; all parameters are probed if d is smaller.
        weight_decay: L2 penalty included in the objective.
        loss: Loss kind, cross-entropy by default.

    Returns:
        The maximum relative error |g - c| / (|g| + |c| + 1e-12) over the probed parameters.

    Raises:
        ContractViolationError: If epsilon is out of range.
        NumericFailureError: If the loss is not finite.
    """
    # model builds on numerics, so the import is deferred.
    from reinit_lab.api.model import Loss, Mode, compute_loss, loss_and_grads  # noqa: PLC0415

    if not 0 < epsilon <= GRADCHECK_MAX_EPSILON:
        err_msg = f'epsilon must lie in (0, {GRADCHECK_MAX_EPSILON}], got {epsilon}.'
        raise ContractViolationError(err_msg)
    loss = Loss.CROSS_ENTROPY if loss is None else loss
    rng = RngStream(0) if rng is None else rng

    flat = network.params.flat
    ensure_finite(flat, 'network parameters')
    _, grads = loss_and_grads(network, batch, weight_decay=weight_decay, mode=Mode.EVAL, loss=loss)

    d = flat.size
    probed = rng.generator().choice(d, size=min(d, n_params), replace=False)
    max_error = 0.0
    for index in probed:
        saved = flat[index]
        flat[index] = saved + epsilon
        loss_plus = compute_loss(network, batch, weight_decay=weight_decay, mode=Mode.EVAL, loss=loss)
        flat[index] = saved - epsilon
        loss_minus = compute_loss(network, batch, weight_decay=weight_decay, mode=Mode.EVAL, loss=loss)
        flat[index] = saved
        central = (loss_plus - loss_minus) / (2.0 * epsilon)
        analytic = grads[index]
        error = abs(analytic - central) / (abs(analytic) + abs(central) + 1e-12)
        max_error = max(max_error, float(error))

    logger.info('Gradient check over %d parameters: max relative error %.3e.', probed.size, max_error)
    return max_error
