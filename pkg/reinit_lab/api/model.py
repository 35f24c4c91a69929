"""Block-structured networks, losses, the SGD optimizer, the plateau schedule and the training loop."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt
from scipy.special import logsumexp

from reinit_lab.api import ArchitectureError, ConfigError, ContractViolationError
from reinit_lab.api.layers import Dense, Dropout, Layer, LayerKind, LambdaNorm, SoftmaxHead
from reinit_lab.api.numerics import RngStream, Tensor, ensure_finite, initialize
from reinit_lab.schema import FULL_BATCH, Initializer, TrainConfig

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

logger = logging.getLogger(__name__)

PREDICT_CHUNK = 512

Labels = npt.NDArray[np.int64]


class Mode(enum.Enum):
    """Evaluation mode. TRAIN enables dropout sampling."""

    TRAIN = 'train'
    EVAL = 'eval'


class Loss(enum.Enum):
    """Training objectives. SQUARED is 0.5 * mean squared distance between logits and one-hot labels."""

    CROSS_ENTROPY = 'cross_entropy'
    SQUARED = 'squared'


@dataclass(frozen=True)
class Dataset:
    """Inputs and integer labels of a labelled sample."""

    x: Tensor
    y: Labels

    def __post_init__(self) -> None:
        """Validates the sample sizes."""
        if self.x.shape[0] != self.y.shape[0]:
            err_msg = f'Dataset has {self.x.shape[0]} inputs but {self.y.shape[0]} labels.'
            raise ContractViolationError(err_msg)

    def __len__(self) -> int:
        """Number of examples."""
        return int(self.y.shape[0])

    def subset(self, indices: npt.NDArray[np.int64]) -> Dataset:
        """Gets the examples at the given indices."""
        return Dataset(self.x[indices], self.y[indices])


@dataclass(frozen=True)
class SplitData:
    """Training examples and the optional validation split held out of them."""

    train: Dataset
    val: None | Dataset = None


def split_dataset(dataset: Dataset, val_fraction: float, rng: RngStream) -> SplitData:
    """Holds out floor(val_fraction * n) random examples for validation.

    Args:
        dataset: The training set.
        val_fraction: Fraction of examples held out, in [0, 1).
        rng: Stream selecting the held-out examples.

    Returns:
        The split. val is None if no example is held out.

    Raises:
        ConfigError: If the dataset is empty or the split leaves no training example.
    """
    n = len(dataset)
    if n == 0:
        err_msg = 'Cannot train on an empty dataset.'
        raise ConfigError(err_msg)
    n_val = math.floor(val_fraction * n)
    if n_val == 0:
        return SplitData(train=dataset)
    if n_val >= n:
        err_msg = f'val_fraction {val_fraction} leaves no training examples out of {n}.'
        raise ConfigError(err_msg)
    order = rng.generator().permutation(n)
    return SplitData(train=dataset.subset(np.sort(order[n_val:])), val=dataset.subset(np.sort(order[:n_val])))


@dataclass(frozen=True)
class Segment:
    """Position of one trainable tensor inside the flat parameter vector."""

    layer_id: int
    name: str
    offset: int
    length: int
    shape: tuple[int, ...]
    fan_in: int
    fan_out: int
    is_weight: bool

    @property
    def stop(self) -> int:
        """End offset (exclusive)."""
        return self.offset + self.length


class ParameterStore:
    """Owns the flat parameter vector w and its gradient buffer.

    Layers receive reshaped views of both vectors, so writes through the flat vector are observed by the layer
    tensors and vice versa. The arrays are never rebound: every update must write in place.
    """

    def __init__(self, layers: Sequence[Layer]) -> None:
        """Lays out the trainable tensors of the layers in order and binds the views.

        Args:
            layers: All layers of the network in forward order.

        Raises:
            ContractViolationError: If a layer is registered twice.
        """
        segments: list[Segment] = []
        offset = 0
        seen: set[int] = set()
        for layer in layers:
            if id(layer) in seen:
                err_msg = f'{layer!r} is registered twice.'
                raise ContractViolationError(err_msg)
            seen.add(id(layer))
            for spec in layer.param_specs():
                length = math.prod(spec.shape)
                segments.append(
                    Segment(
                        layer_id=layer.layer_id,
                        name=spec.name,
                        offset=offset,
                        length=length,
                        shape=spec.shape,
                        fan_in=spec.fan_in,
                        fan_out=spec.fan_out,
                        is_weight=spec.is_weight,
                    )
                )
                offset += length

        self._segments = tuple(segments)
        self._flat = np.zeros(offset)
        self._grad = np.zeros(offset)
        by_id = {layer.layer_id: layer for layer in layers}
        for segment in self._segments:
            layer = by_id[segment.layer_id]
            layer.params[segment.name] = self.view(segment)
            layer.grads[segment.name] = self._grad[segment.offset : segment.stop].reshape(segment.shape)

    @property
    def flat(self) -> Tensor:
        """The parameter vector w."""
        return self._flat

    @property
    def grad(self) -> Tensor:
        """The gradient buffer written by the backward pass."""
        return self._grad

    @property
    def d(self) -> int:
        """Number of trainable parameters."""
        return int(self._flat.size)

    @property
    def segments(self) -> tuple[Segment, ...]:
        """All segments in offset order."""
        return self._segments

    def view(self, segment: Segment) -> Tensor:
        """Gets the tensor view of a segment."""
        return self._flat[segment.offset : segment.stop].reshape(segment.shape)

    def segments_of(self, layer_ids: set[int]) -> list[Segment]:
        """Gets the segments owned by the given layers."""
        return [segment for segment in self._segments if segment.layer_id in layer_ids]

    def mask_of(self, layer_ids: set[int]) -> npt.NDArray[np.bool_]:
        """Gets a boolean mask over w that is true on the parameters of the given layers."""
        mask = np.zeros(self.d, dtype=bool)
        for segment in self.segments_of(layer_ids):
            mask[segment.offset : segment.stop] = True
        return mask

    def assign(self, values: Tensor) -> None:
        """Overwrites w in place.

        Raises:
            ContractViolationError: If the length does not match d.
        """
        if values.shape != self._flat.shape:
            err_msg = f'Cannot assign {values.shape[0] if values.ndim else 0} values to {self.d} parameters.'
            raise ContractViolationError(err_msg)
        self._flat[...] = values


class Network:
    """K feature blocks followed by head layers ending in a SoftmaxHead.

    LambdaNorm layers inserted by the layerwise rounds sit between block k and block k + 1. They are not part of
    any block and hold no trainable parameters.
    """

    def __init__(  # noqa: PLR0913
        self,
        blocks: Sequence[Sequence[Layer]],
        head: Sequence[Layer],
        *,
        input_shape: tuple[int, ...],
        initializer: Initializer = Initializer.HE_NORMAL,
        fc_boundary: None | int = None,
        name: str = 'network',
    ) -> None:
        """Validates the architecture and lays out its parameters. All parameters start at zero.

        Args:
            blocks: The K feature blocks.
            head: The layers after block K; the last one must be a SoftmaxHead.
            input_shape: Per-example input shape.
            initializer: Initializer of the weight tensors.
            fc_boundary: Block after which the fully-connected layers reinitialized by FC start. Defaults to K.
            name: Preset name used in logs.

        Raises:
            ArchitectureError: If the layers do not form a valid network.
        """
        if not blocks or any(not block for block in blocks):
            err_msg = 'A network needs at least one non-empty feature block.'
            raise ArchitectureError(err_msg)
        if not head or not isinstance(head[-1], SoftmaxHead):
            err_msg = 'The head must end with a SoftmaxHead layer.'
            raise ArchitectureError(err_msg)

        self.name = name
        self.blocks = [list(block) for block in blocks]
        self.head = list(head)
        self.input_shape = input_shape
        self.initializer = initializer
        self.lambdas: dict[int, LambdaNorm] = {}
        self.init_scales: None | dict[tuple[int, str], float] = None

        layers = [layer for block in self.blocks for layer in block] + self.head
        if any(isinstance(layer, SoftmaxHead) for layer in layers[:-1]):
            err_msg = 'SoftmaxHead may only appear as the last layer.'
            raise ArchitectureError(err_msg)
        if any(isinstance(layer, LambdaNorm) for layer in layers):
            err_msg = 'LambdaNorm layers are inserted by the layerwise rounds, not declared.'
            raise ArchitectureError(err_msg)
        for layer_id, layer in enumerate(layers):
            layer.layer_id = layer_id

        shape = input_shape
        for layer in layers:
            shape = layer.output_shape(shape)
        self.n_classes = shape[0]

        self.fc_boundary = self.k if fc_boundary is None else fc_boundary
        if not 1 <= self.fc_boundary <= self.k:
            err_msg = f'fc_boundary must lie in [1, {self.k}], got {self.fc_boundary}.'
            raise ArchitectureError(err_msg)

        self.params = ParameterStore(layers)
        self._layer_block = {layer.layer_id: k for k, block in enumerate(self.blocks, start=1) for layer in block}

    @property
    def k(self) -> int:
        """Number of feature blocks K."""
        return len(self.blocks)

    @property
    def head_start(self) -> int:
        """Layer id of the first head layer."""
        return self.head[0].layer_id

    def layers(self) -> Iterator[Layer]:
        """Iterates over all layers in forward order, including inserted LambdaNorm layers."""
        for k, block in enumerate(self.blocks, start=1):
            yield from block
            if k in self.lambdas:
                yield self.lambdas[k]
        yield from self.head

    def block_of(self, layer_id: int) -> None | int:
        """Gets the 1-based block index of a layer, None for head layers."""
        return self._layer_block.get(layer_id)

    def layer_ids_through(self, k: int) -> set[int]:
        """Ids of the layers in blocks 1..k."""
        return {layer.layer_id for block in self.blocks[:k] for layer in block}

    def layer_ids_above(self, k: int) -> set[int]:
        """Ids of the layers strictly above block k, head included."""
        above = {layer.layer_id for block in self.blocks[k:] for layer in block}
        return above | {layer.layer_id for layer in self.head}

    def dense_layers_above(self, k: int) -> list[Dense]:
        """Dense layers strictly above block k in forward order."""
        ids = self.layer_ids_above(k)
        layers = [layer for block in self.blocks for layer in block] + self.head
        return [layer for layer in layers if isinstance(layer, Dense) and layer.layer_id in ids]

    def last_dense(self) -> Dense:
        """The dense layer producing the logits.

        Raises:
            ArchitectureError: If the network holds no dense layer.
        """
        dense = self.dense_layers_above(0)
        if not dense:
            err_msg = f'{self.name} holds no dense layer.'
            raise ArchitectureError(err_msg)
        return dense[-1]

    def attach_dropout(self, generator: None | np.random.Generator) -> None:
        """Sets the generator used by the Dropout layers in train mode."""
        for layer in self.layers():
            if isinstance(layer, Dropout):
                layer.generator = generator

    def sample_init(self, rng: RngStream) -> Tensor:
        """Draws a fresh initialization eta of w: weights from the configured initializer, other tensors zero.

        Each segment draws from its own child stream keyed by its layer id and tensor name.

        Args:
            rng: The initialization stream.

        Returns:
            A new vector of length d.
        """
        eta = np.zeros(self.params.d)
        for segment in self.params.segments:
            if segment.is_weight:
                stream = rng.child(f'{segment.layer_id}/{segment.name}')
                eta[segment.offset : segment.stop] = initialize(
                    self.initializer, segment.fan_in, segment.fan_out, segment.shape, stream
                ).ravel()
        return eta

    def initialize(self, rng: RngStream) -> None:
        """Overwrites w with a fresh initialization."""
        self.params.assign(self.sample_init(rng))

    def check_input(self, x: Tensor) -> None:
        """Validates a batch against the input shape.

        Raises:
            ArchitectureError: If the per-example shape does not match.
        """
        if tuple(x.shape[1:]) != self.input_shape:
            err_msg = f'{self.name} expects inputs of shape {self.input_shape}, got {tuple(x.shape[1:])}.'
            raise ArchitectureError(err_msg)

    def __repr__(self) -> str:
        """Short description used in logs."""
        return f'{self.name}(K={self.k}, d={self.params.d}, lambdas={sorted(self.lambdas)})'


def _logits(network: Network, x: Tensor, *, training: bool) -> Tensor:
    network.check_input(x)
    for layer in network.layers():
        if layer.kind is LayerKind.SOFTMAX_HEAD:
            return x
        x = layer.forward(x, training=training)
    err_msg = f'{network.name} has no SoftmaxHead.'
    raise ArchitectureError(err_msg)


def forward(network: Network, x: Tensor, mode: Mode = Mode.EVAL) -> Tensor:
    """Evaluates the class probabilities of a batch.

    Args:
        network: The network.
        x: Batch of inputs.
        mode: TRAIN samples dropout masks, EVAL is deterministic.

    Returns:
        Row-stochastic matrix of shape [n, C].

    Raises:
        ArchitectureError: If the batch shape does not match the network.
    """
    logits = _logits(network, x, training=mode is Mode.TRAIN)
    return network.head[-1].forward(logits, training=mode is Mode.TRAIN)


def block_output(network: Network, x: Tensor, k: int) -> Tensor:
    """Eval-mode output of block k, after the LambdaNorm layers of earlier blocks but before block k's own."""
    network.check_input(x)
    for index, block in enumerate(network.blocks[:k], start=1):
        for layer in block:
            x = layer.forward(x, training=False)
        if index < k and index in network.lambdas:
            x = network.lambdas[index].forward(x, training=False)
    return x


def layer_input(network: Network, x: Tensor, target: Layer) -> Tensor:
    """Eval-mode input of the target layer.

    Raises:
        ContractViolationError: If the layer is not part of the network.
    """
    network.check_input(x)
    for layer in network.layers():
        if layer is target:
            return x
        x = layer.forward(x, training=False)
    err_msg = f'{target!r} is not part of {network.name}.'
    raise ContractViolationError(err_msg)


def _objective(logits: Tensor, labels: Labels, loss: Loss) -> tuple[float, Tensor]:
    n, n_classes = logits.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    if loss is Loss.SQUARED:
        residual = logits - onehot
        return 0.5 * float(np.sum(residual * residual)) / n, residual / n
    log_norm = logsumexp(logits, axis=1)
    value = float(np.mean(log_norm - logits[np.arange(n), labels]))
    probs = np.exp(logits - log_norm[:, None])
    return value, (probs - onehot) / n


def _backward(network: Network, grad: Tensor) -> None:
    layers = list(network.layers())[:-1]
    for layer in reversed(layers):
        grad = layer.backward(grad)


def _check_labels(network: Network, batch: Dataset) -> None:
    if len(batch) == 0:
        err_msg = 'Cannot evaluate a loss on an empty batch.'
        raise ConfigError(err_msg)
    if batch.y.min() < 0 or batch.y.max() >= network.n_classes:
        err_msg = f'Labels must lie in [0, {network.n_classes}).'
        raise ContractViolationError(err_msg)


def compute_loss(
    network: Network,
    batch: Dataset,
    *,
    weight_decay: float = 0.0,
    mode: Mode = Mode.EVAL,
    loss: Loss = Loss.CROSS_ENTROPY,
) -> float:
    """Evaluates the objective without touching the gradient buffer.

    Raises:
        NumericFailureError: If the loss is not finite.
    """
    _check_labels(network, batch)
    logits = _logits(network, batch.x, training=mode is Mode.TRAIN)
    value, _ = _objective(logits, batch.y, loss)
    flat = network.params.flat
    value += 0.5 * weight_decay * float(flat @ flat)
    ensure_finite(value, 'the loss')
    return value


def _loss_and_grads_inplace(
    network: Network, batch: Dataset, *, weight_decay: float, mode: Mode, loss: Loss
) -> tuple[float, Tensor]:
    _check_labels(network, batch)
    logits = _logits(network, batch.x, training=mode is Mode.TRAIN)
    value, grad_logits = _objective(logits, batch.y, loss)
    flat = network.params.flat
    value += 0.5 * weight_decay * float(flat @ flat)
    ensure_finite(value, 'the loss')
    _backward(network, grad_logits)
    grads = network.params.grad
    if weight_decay:
        grads += weight_decay * flat
    return value, grads


def loss_and_grads(
    network: Network,
    batch: Dataset,
    *,
    weight_decay: float = 0.0,
    mode: Mode = Mode.TRAIN,
    loss: Loss = Loss.CROSS_ENTROPY,
) -> tuple[float, Tensor]:
    """Evaluates the objective and its gradient with respect to w.

    The objective is the mean loss plus weight_decay * 0.5 * ||w||^2.

    Args:
        network: The network.
        batch: Inputs and labels in [0, C).
        weight_decay: L2 penalty.
        mode: Evaluation mode of the forward pass.
        loss: The loss kind.

    Returns:
        The loss and a copy of the gradient, aligned with the ParameterStore layout.

    Raises:
        NumericFailureError: If the loss is not finite.
    """
    value, grads = _loss_and_grads_inplace(network, batch, weight_decay=weight_decay, mode=mode, loss=loss)
    return value, grads.copy()


def predict(network: Network, x: Tensor) -> Tensor:
    """Eval-mode class probabilities, evaluated in chunks."""
    if x.shape[0] == 0:
        return np.zeros((0, network.n_classes))
    return np.concatenate(
        [forward(network, x[start : start + PREDICT_CHUNK]) for start in range(0, x.shape[0], PREDICT_CHUNK)]
    )


def margins_of(probs: Tensor, labels: Labels) -> Tensor:
    """Softmax margins p_true(x_i) - max_{j != true} p_j(x_i), in input order."""
    rows = np.arange(labels.shape[0])
    true = probs[rows, labels]
    others = probs.copy()
    others[rows, labels] = -np.inf
    return true - others.max(axis=1)


def correct_mask(probs: Tensor, labels: Labels) -> npt.NDArray[np.bool_]:
    """An example counts as correct iff its margin is positive, so ties with another class are errors."""
    return margins_of(probs, labels) > 0


def accuracy(network: Network, dataset: Dataset) -> float:
    """Eval-mode accuracy. Ties with another class count as errors.

    Raises:
        ConfigError: If the dataset is empty.
    """
    if len(dataset) == 0:
        err_msg = 'Cannot evaluate the accuracy on an empty dataset.'
        raise ConfigError(err_msg)
    return float(np.mean(correct_mask(predict(network, dataset.x), dataset.y)))


def sgd_step(  # noqa: PLR0913
    params: Tensor,
    grads: Tensor,
    velocity: Tensor,
    config: TrainConfig,
    learning_rate: None | float = None,
    frozen: None | npt.NDArray[np.bool_] = None,
) -> None:
    """One momentum SGD step in place: v <- momentum * v - lr * g; w <- w + v.

    Args:
        params: The parameter vector, updated in place.
        grads: The gradient; weight decay is already folded in.
        velocity: The momentum buffer, updated in place.
        config: Provides momentum and the default learning rate.
        learning_rate: Overrides the configured learning rate (plateau schedule).
        frozen: Parameters that must not move.
    """
    lr = config.learning_rate if learning_rate is None else learning_rate
    if frozen is not None:
        grads = np.where(frozen, 0.0, grads)
    velocity *= config.momentum
    velocity -= lr * grads
    params += velocity


class PlateauScheduler:
    """Multiplies the learning rate by factor whenever the monitored error has not improved for patience epochs.

    A patience of None disables the schedule.
    """

    def __init__(self, learning_rate: float, patience: None | int, factor: float) -> None:
        """Initializes the scheduler."""
        self._learning_rate = learning_rate
        self._patience = patience
        self._factor = factor
        self._best = math.inf
        self._wait = 0

    @property
    def learning_rate(self) -> float:
        """The current learning rate."""
        return self._learning_rate

    def step(self, error: float) -> float:
        """Reports the error of a finished epoch.

        Args:
            error: Monitored error, lower is better.

        Returns:
            The learning rate for the next epoch.
        """
        if self._patience is None:
            return self._learning_rate
        if error < self._best:
            self._best = error
            self._wait = 0
            return self._learning_rate
        self._wait += 1
        if self._wait >= self._patience:
            self._learning_rate *= self._factor
            self._wait = 0
            logger.info('No improvement for %d epochs, learning rate now %g.', self._patience, self._learning_rate)
        return self._learning_rate


@dataclass(frozen=True)
class EpochRecord:
    """Eval-mode accuracies measured after `step` steps."""

    step: int
    train_acc: float
    val_acc: None | float
    learning_rate: float


@dataclass
class TrainTrace:
    """Per-step losses and per-epoch accuracies of one training call."""

    losses: list[float] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def total_steps(self) -> int:
        """Number of optimizer steps taken."""
        return len(self.losses)

    @property
    def final(self) -> None | EpochRecord:
        """The last epoch record."""
        return self.epochs[-1] if self.epochs else None

    def steps_to_threshold(self, threshold: float) -> None | int:
        """First recorded step whose training accuracy reaches the threshold, None if never reached."""
        for record in self.epochs:
            if record.train_acc >= threshold:
                return record.step
        return None

    def threshold_map(self, thresholds: Sequence[float]) -> dict[str, None | int]:
        """steps_to_threshold for several thresholds, keyed by their string form."""
        return {str(threshold): self.steps_to_threshold(threshold) for threshold in thresholds}


def _monitored_error(val_acc: None | float, epoch_losses: list[float]) -> float:
    if val_acc is not None:
        return 1.0 - val_acc
    return float(np.mean(epoch_losses))


def train(  # noqa: PLR0913
    network: Network,
    split: SplitData,
    config: TrainConfig,
    rng: RngStream,
    *,
    max_steps: None | int = None,
    frozen: None | npt.NDArray[np.bool_] = None,
    loss: Loss = Loss.CROSS_ENTROPY,
) -> TrainTrace:
    """Trains the network with momentum SGD.

    Velocity starts at zero. Accuracies are recorded at step 0 and after every epoch; under FULL_BATCH one step
    is one epoch. With early_stop the parameters of the trained epoch with the best validation accuracy are
    restored at the end, the latest one on ties; the step budget is always spent in full.

    Args:
        network: The network, trained in place.
        split: The fixed train/validation split of the run.
        config: Optimizer and schedule settings.
        rng: Stream for minibatch order and dropout masks.
        max_steps: Overrides config.max_steps.
        frozen: Parameters kept fixed.
        loss: The loss kind.

    Returns:
        The trace. It is empty if the budget is zero.

    Raises:
        ConfigError: If the training split is empty.
        NumericFailureError: If the loss or the parameters become non-finite.
    """
    train_set, val_set = split.train, split.val
    n = len(train_set)
    if n == 0:
        err_msg = 'Cannot train on an empty dataset.'
        raise ConfigError(err_msg)
    budget = config.max_steps if max_steps is None else max_steps
    trace = TrainTrace()
    if budget == 0:
        return trace

    batch_size = n if config.batch_size == FULL_BATCH else min(int(config.batch_size), n)
    steps_per_epoch = math.ceil(n / batch_size)
    order_gen = rng.child('batches').generator()
    network.attach_dropout(rng.child('dropout').generator())

    params = network.params.flat
    velocity = np.zeros_like(params)
    scheduler = PlateauScheduler(config.learning_rate, config.plateau_patience_epochs, config.plateau_factor)

    def measure(step: int) -> EpochRecord:
        val_acc = accuracy(network, val_set) if val_set is not None else None
        record = EpochRecord(step, accuracy(network, train_set), val_acc, scheduler.learning_rate)
        trace.epochs.append(record)
        return record

    measure(0)
    best_val: None | float = None
    best_params = params.copy() if config.early_stop else None

    order = np.arange(n)
    epoch_losses: list[float] = []
    for step in range(budget):
        position = step % steps_per_epoch
        if position == 0 and batch_size < n:
            order = order_gen.permutation(n)
        batch = train_set.subset(order[position * batch_size : (position + 1) * batch_size])
        value, grads = _loss_and_grads_inplace(
            network, batch, weight_decay=config.weight_decay, mode=Mode.TRAIN, loss=loss
        )
        sgd_step(params, grads, velocity, config, scheduler.learning_rate, frozen)
        ensure_finite(params, 'the parameters')
        trace.losses.append(value)
        epoch_losses.append(value)

        if position == steps_per_epoch - 1 or step == budget - 1:
            record = measure(step + 1)
            scheduler.step(_monitored_error(record.val_acc, epoch_losses))
            epoch_losses = []
            # step 0 is never a candidate; ties go to the later epoch
            improved = record.val_acc is not None and (best_val is None or record.val_acc >= best_val)
            if best_params is not None and improved:
                best_val = record.val_acc
                best_params[...] = params

    if best_params is not None:
        params[...] = best_params
    network.attach_dropout(None)
    return trace
