"""Small module system: parameter registration, conv and batch-norm layers."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, Tensor


class Module:
    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Module, Tensor, BatchNormState)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Tensor, BatchNormState)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        """Batch-norm running statistics, as (name, state, attribute) triples."""
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, BatchNormState):
                yield f"{prefix}{name}.running_mean", value, "running_mean"
                yield f"{prefix}{name}.running_var", value, "running_var"

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
        return self


def he_normal(rng: np.random.Generator, shape: tuple, gain: float = 2.0) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        dilation: int = 1,
        padding: str = "reflect",
        bias: bool = True,
        gain: float = 2.0,
    ):
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.weight = Tensor(he_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), gain), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[-1]

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.stats = BatchNormState(channels, momentum, eps)

    def forward(self, x: Tensor) -> Tensor:
        return T.batchnorm2d(x, self.gamma, self.beta, self.stats, self.training)


def conv_bn_relu(x: Tensor, conv: Conv2d, bn: Optional[BatchNorm2d], act: bool = True) -> Tensor:
    y = conv(x)
    if bn is not None:
        y = bn(y)
    return T.relu(y) if act else y
