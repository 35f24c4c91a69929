"""Layer zoo with forward and reverse-mode evaluation on NCHW / NC float64 arrays."""

from __future__ import annotations

import abc
import enum
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
from scipy import special

from reinit_lab.api import ArchitectureError, ContractViolationError
from reinit_lab.api.numerics import Tensor

SIGMA_FLOOR = 1e-8
FEATURE_NORM_EPS = 1e-5


class LayerKind(enum.Enum):
    """Kinds of layers a network can hold."""

    DENSE = 'Dense'
    CONV2D = 'Conv2D'
    MAXPOOL2D = 'MaxPool2D'
    FLATTEN = 'Flatten'
    RELU = 'ReLU'
    DROPOUT = 'Dropout'
    LAMBDA_NORM = 'LambdaNorm'
    FEATURE_NORM = 'FeatureNorm'
    SOFTMAX_HEAD = 'SoftmaxHead'


@dataclass(frozen=True)
class ParamSpec:
    """Shape and fans of one trainable tensor. Tensors with is_weight=False are initialized to zero."""

    name: str
    shape: tuple[int, ...]
    fan_in: int
    fan_out: int
    is_weight: bool


class Layer(abc.ABC):
    """Base class of all layers.

    Trainable tensors are not owned by the layer: the ParameterStore of the owning network binds views of its
    flat parameter and gradient vectors into params and grads.
    """

    kind: ClassVar[LayerKind]

    def __init__(self) -> None:
        """Initializes an unbound layer."""
        self.layer_id = -1
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, Tensor] = {}

    @property
    def trainable(self) -> bool:
        """Whether the layer holds trainable tensors."""
        return bool(self.param_specs())

    def param_specs(self) -> list[ParamSpec]:
        """Lists the trainable tensors of the layer."""
        return []

    @abc.abstractmethod
    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Per-example output shape for a per-example input shape."""

    @abc.abstractmethod
    def forward(self, x: Tensor, *, training: bool) -> Tensor:
        """Evaluates the layer and caches what backward needs."""

    @abc.abstractmethod
    def backward(self, grad: Tensor) -> Tensor:
        """Writes parameter gradients into grads and returns the gradient w.r.t. the input."""

    def __repr__(self) -> str:
        """Short description used in logs."""
        return f'{self.kind.value}#{self.layer_id}'


class Dense(Layer):
    """Affine layer x @ W + b with W of shape [in, out]."""

    kind = LayerKind.DENSE

    def __init__(self, in_features: int, out_features: int, *, use_bias: bool = True) -> None:
        """Initializes the layer.

        Raises:
            ArchitectureError: If a dimension is not positive.
        """
        super().__init__()
        if in_features < 1 or out_features < 1:
            err_msg = f'Dense layer needs positive dimensions, got {in_features} -> {out_features}.'
            raise ArchitectureError(err_msg)
        self.in_features = in_features
        self.out_features = out_features
        self.use_bias = use_bias
        self._x: None | Tensor = None

    def param_specs(self) -> list[ParamSpec]:
        specs = [ParamSpec('weight', (self.in_features, self.out_features), self.in_features, self.out_features, True)]
        if self.use_bias:
            specs.append(ParamSpec('bias', (self.out_features,), self.in_features, self.out_features, False))
        return specs

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        if input_shape != (self.in_features,):
            err_msg = f'{self!r} expects inputs of shape ({self.in_features},), got {input_shape}.'
            raise ArchitectureError(err_msg)
        return (self.out_features,)

    def forward(self, x: Tensor, *, training: bool) -> Tensor:  # noqa: ARG002
        self._x = x
        out = x @ self.params['weight']
        if self.use_bias:
            out = out + self.params['bias']
        return out

    def backward(self, grad: Tensor) -> Tensor:
        x = self._x
        if x is None:
            err_msg = f'{self!r}: backward called before forward.'
            raise ContractViolationError(err_msg)
        self.grads['weight'][...] = x.T @ grad
        if self.use_bias:
            self.grads['bias'][...] = grad.sum(axis=0)
        return grad @ self.params['weight'].T


def im2col(x: Tensor, kernel_h: int, kernel_w: int, pad: int) -> Tensor:
    """Unfolds stride-1 patches of an NCHW batch into rows of shape [C * kh * kw]."""
    n, c, h, w = x.shape
    out_h = h + 2 * pad - kernel_h + 1
    out_w = w + 2 * pad - kernel_w + 1
    img = np.pad(x, [(0, 0), (0, 0), (pad, pad), (pad, pad)], mode='constant')
    col = np.zeros((n, c, kernel_h, kernel_w, out_h, out_w))
    for y in range(kernel_h):
        for x_off in range(kernel_w):
            col[:, :, y, x_off, :, :] = img[:, :, y : y + out_h, x_off : x_off + out_w]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(n * out_h * out_w, -1)


def col2im(col: Tensor, input_shape: tuple[int, ...], kernel_h: int, kernel_w: int, pad: int) -> Tensor:
    """Folds patch rows back into an NCHW batch, summing overlapping contributions."""
    n, c, h, w = input_shape
    out_h = h + 2 * pad - kernel_h + 1
    out_w = w + 2 * pad - kernel_w + 1
    col = col.reshape(n, out_h, out_w, c, kernel_h, kernel_w).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for y in range(kernel_h):
        for x_off in range(kernel_w):
            img[:, :, y : y + out_h, x_off : x_off + out_w] += col[:, :, y, x_off, :, :]
    return img[:, :, pad : h + pad, pad : w + pad]


class Conv2D(Layer):
    """Stride-1 'same' convolution with a kernel of shape [out, in, kh, kw].

    fan_in is kh * kw * in_channels and fan_out is kh * kw * out_channels.
    """

    kind = LayerKind.CONV2D

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, *, use_bias: bool = True) -> None:
        """Initializes the layer.

        Raises:
            ArchitectureError: If the kernel size is even or a dimension is not positive.
        """
        super().__init__()
        if in_channels < 1 or out_channels < 1 or kernel_size < 1 or kernel_size % 2 == 0:
            err_msg = (
                f'Conv2D needs positive channels and an odd kernel size, got '
                f'{in_channels} -> {out_channels}, kernel {kernel_size}.'
            )
            raise ArchitectureError(err_msg)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.use_bias = use_bias
        self._col: None | Tensor = None
        self._input_shape: tuple[int, ...] = ()

    def param_specs(self) -> list[ParamSpec]:
        area = self.kernel_size * self.kernel_size
        fan_in = area * self.in_channels
        fan_out = area * self.out_channels
        shape = (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
        specs = [ParamSpec('weight', shape, fan_in, fan_out, True)]
        if self.use_bias:
            specs.append(ParamSpec('bias', (self.out_channels,), fan_in, fan_out, False))
        return specs

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(input_shape) != 3 or input_shape[0] != self.in_channels:  # noqa: PLR2004
            err_msg = f'{self!r} expects inputs of shape ({self.in_channels}, H, W), got {input_shape}.'
            raise ArchitectureError(err_msg)
        return (self.out_channels, input_shape[1], input_shape[2])

    def forward(self, x: Tensor, *, training: bool) -> Tensor:  # noqa: ARG002
        n, _, h, w = x.shape
        pad = self.kernel_size // 2
        col = im2col(x, self.kernel_size, self.kernel_size, pad)
        self._col = col
        self._input_shape = x.shape
        kernel = self.params['weight'].reshape(self.out_channels, -1)
        out = col @ kernel.T
        if self.use_bias:
            out = out + self.params['bias']
        return out.reshape(n, h, w, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, grad: Tensor) -> Tensor:
        col = self._col
        if col is None:
            err_msg = f'{self!r}: backward called before forward.'
            raise ContractViolationError(err_msg)
        rows = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        kernel = self.params['weight'].reshape(self.out_channels, -1)
        self.grads['weight'][...] = (rows.T @ col).reshape(self.grads['weight'].shape)
        if self.use_bias:
            self.grads['bias'][...] = rows.sum(axis=0)
        dcol = rows @ kernel
        return col2im(dcol, self._input_shape, self.kernel_size, self.kernel_size, self.kernel_size // 2)


class MaxPool2D(Layer):
    """Non-overlapping max pooling. The gradient is routed to the first maximal entry of each window."""

    kind = LayerKind.MAXPOOL2D

    def __init__(self, pool_size: int = 2) -> None:
        """Initializes the layer."""
        super().__init__()
        if pool_size < 1:
            err_msg = f'Pool size must be positive, got {pool_size}.'
            raise ArchitectureError(err_msg)
        self.pool_size = pool_size
        self._argmax: None | np.ndarray = None
        self._input_shape: tuple[int, ...] = ()

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        c, h, w = input_shape
        if h % self.pool_size or w % self.pool_size:
            err_msg = f'{self!r}: spatial size {h}x{w} is not divisible by pool size {self.pool_size}.'
            raise ArchitectureError(err_msg)
        return (c, h // self.pool_size, w // self.pool_size)

    def _windows(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        p = self.pool_size
        return (
            x.reshape(n, c, h // p, p, w // p, p).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // p, w // p, p * p)
        )

    def forward(self, x: Tensor, *, training: bool) -> Tensor:  # noqa: ARG002
        windows = self._windows(x)
        self._argmax = windows.argmax(axis=-1)[..., None]
        self._input_shape = x.shape
        return np.take_along_axis(windows, self._argmax, axis=-1)[..., 0]

    def backward(self, grad: Tensor) -> Tensor:
        if self._argmax is None:
            err_msg = f'{self!r}: backward called before forward.'
            raise ContractViolationError(err_msg)
        n, c, h, w = self._input_shape
        p = self.pool_size
        windows = np.zeros((n, c, h // p, w // p, p * p))
        np.put_along_axis(windows, self._argmax, grad[..., None], axis=-1)
        return windows.reshape(n, c, h // p, w // p, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


class Flatten(Layer):
    """Flattens each example into a vector."""

    kind = LayerKind.FLATTEN

    def __init__(self) -> None:
        """Initializes the layer."""
        super().__init__()
        self._input_shape: tuple[int, ...] = ()

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return (int(np.prod(input_shape)),)

    def forward(self, x: Tensor, *, training: bool) -> Tensor:  # noqa: ARG002
        self._input_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: Tensor) -> Tensor:
        return grad.reshape(self._input_shape)


class ReLU(Layer):
    """Rectified linear unit; the derivative at 0 is taken as 0."""

    kind = LayerKind.RELU

    def __init__(self) -> None:
        """Initializes the layer."""
        super().__init__()
        self._active: None | np.ndarray = None

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def forward(self, x: Tensor, *, training: bool) -> Tensor:  # noqa: ARG002
        self._active = x > 0
        return np.where(self._active, x, 0.0)

    def backward(self, grad: Tensor) -> Tensor:
        return np.where(self._active, grad, 0.0)


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1 / (1 - rate) at train time, identity at eval time."""

    kind = LayerKind.DROPOUT

    def __init__(self, rate: float) -> None:
        """Initializes the layer.

        Raises:
            ArchitectureError: If rate is outside [0, 1).
        """
        super().__init__()
        if not 0 <= rate < 1:
            err_msg = f'Dropout rate must lie in [0, 1), got {rate}.'
            raise ArchitectureError(err_msg)
        self.rate = rate
        self.generator: None | np.random.Generator = None
        self._scale: None | Tensor = None

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def forward(self, x: Tensor, *, training: bool) -> Tensor:
        if not training or self.rate == 0:
            self._scale = None
            return x
        if self.generator is None:
            err_msg = f'{self!r}: no dropout generator attached for train-mode evaluation.'
            raise ContractViolationError(err_msg)
        keep = self.generator.random(x.shape) >= self.rate
        self._scale = keep / (1.0 - self.rate)
        return x * self._scale

    def backward(self, grad: Tensor) -> Tensor:
        if self._scale is None:
            return grad
        return grad * self._scale


class LambdaNorm(Layer):
    """Non-trainable scalar normalization x -> (x - mu) / sigma calibrated on a sample batch."""

    kind = LayerKind.LAMBDA_NORM

    def __init__(self, mu: float, sigma: float) -> None:
        """Initializes the layer."""
        super().__init__()
        self.mu = 0.0
        self.sigma = 1.0
        self.update(mu, sigma)

    def update(self, mu: float, sigma: float) -> None:
        """Sets new statistics.

        Raises:
            ContractViolationError: If sigma is not positive or a value is not finite.
        """
        if not np.isfinite(mu) or not np.isfinite(sigma) or sigma <= 0:
            err_msg = f'LambdaNorm needs a finite mu and a positive sigma, got mu={mu}, sigma={sigma}.'
            raise ContractViolationError(err_msg)
        self.mu = float(mu)
        self.sigma = float(sigma)

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def forward(self, x: Tensor, *, training: bool) -> Tensor:  # noqa: ARG002
        return (x - self.mu) / self.sigma

    def backward(self, grad: Tensor) -> Tensor:
        return grad / self.sigma


class FeatureNorm(Layer):
    """Per-example normalization over all features without affine parameters."""

    kind = LayerKind.FEATURE_NORM

    def __init__(self, eps: float = FEATURE_NORM_EPS) -> None:
        """Initializes the layer."""
        super().__init__()
        self.eps = eps
        self._y: None | Tensor = None
        self._inv_std: None | Tensor = None

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def forward(self, x: Tensor, *, training: bool) -> Tensor:  # noqa: ARG002
        axes = tuple(range(1, x.ndim))
        centered = x - x.mean(axis=axes, keepdims=True)
        self._inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=axes, keepdims=True) + self.eps)
        self._y = centered * self._inv_std
        return self._y

    def backward(self, grad: Tensor) -> Tensor:
        y = self._y
        if y is None or self._inv_std is None:
            err_msg = f'{self!r}: backward called before forward.'
            raise ContractViolationError(err_msg)
        axes = tuple(range(1, grad.ndim))
        return self._inv_std * (
            grad - grad.mean(axis=axes, keepdims=True) - y * (grad * y).mean(axis=axes, keepdims=True)
        )


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax."""
    return special.softmax(logits, axis=1)


class SoftmaxHead(Layer):
    """Turns logits into class probabilities. Must be the last layer of a network."""

    kind = LayerKind.SOFTMAX_HEAD

    def __init__(self) -> None:
        """Initializes the layer."""
        super().__init__()
        self._probs: None | Tensor = None

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(input_shape) != 1:
            err_msg = f'{self!r} expects flat logits, got {input_shape}.'
            raise ArchitectureError(err_msg)
        return input_shape

    def forward(self, x: Tensor, *, training: bool) -> Tensor:  # noqa: ARG002
        self._probs = softmax(x)
        return self._probs

    def backward(self, grad: Tensor) -> Tensor:
        probs = self._probs
        if probs is None:
            err_msg = f'{self!r}: backward called before forward.'
            raise ContractViolationError(err_msg)
        return probs * (grad - (grad * probs).sum(axis=1, keepdims=True))
