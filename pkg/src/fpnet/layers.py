"""Stateful layer objects wrapping :mod:`fpnet.ops` with named parameters."""
from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import ops
from .ops import BatchNormSpec, Conv2dSpec, DwsConvSpec
from .tensor import Parameter, Tensor, get_default_dtype, rng as make_rng


class Module:
    def __init__(self):
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Parameter):
            self._params[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        yield from self._modules.items()

    def named_parameters(self, prefix: str = "", learnable_only: bool = True) -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            if p.learnable or not learnable_only:
                yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.", learnable_only)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, Parameter]":
        """All tensors (learnable and running statistics) by hierarchical name."""
        return OrderedDict(self.named_parameters(learnable_only=False))

    def load_state_dict(self, arrays) -> None:
        own = self.state_dict()
        missing = set(own) - set(arrays)
        unexpected = set(arrays) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(arrays[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def extra_repr(self) -> str:
        return ""

    def __repr__(self) -> str:
        lines = [f"{type(self).__name__}({self.extra_repr()}"]
        for name, m in self._modules.items():
            sub = repr(m).replace("\n", "\n  ")
            lines.append(f"  ({name}): {sub}")
        return "\n".join(lines) + ")" if len(lines) > 1 else lines[0] + ")"


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def __iter__(self):
        return iter(self._modules.values())

    def __len__(self):
        return len(self._modules)

    def __getitem__(self, i):
        return list(self._modules.values())[i]

    def forward(self, x):
        for layer in self._modules.values():
            x = layer(x)
        return x


def he_normal(shape, fan_in: int, g: np.random.Generator) -> np.ndarray:
    return (g.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(get_default_dtype())


class Conv2d(Module):
    def __init__(self, spec: Conv2dSpec, seed=0):
        super().__init__()
        self.spec = spec
        g = make_rng(seed)
        k = spec.kernel_size
        self.weight = Parameter(he_normal(spec.weight_shape, spec.in_channels * k * k, g), decay=True)
        if spec.bias:
            self.bias = Parameter(np.zeros(spec.out_channels, get_default_dtype()))
        else:
            self.bias = None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)

    def extra_repr(self):
        s = self.spec
        return f"{s.in_channels}->{s.out_channels}, k={s.kernel_size}, stride={s.stride}, pad={s.padding}"


class DwsConv(Module):
    def __init__(self, spec: DwsConvSpec, seed=0):
        super().__init__()
        self.spec = spec
        g = make_rng(seed)
        k = spec.kernel_size
        self.weight = Parameter(he_normal(spec.weight_shape, k * k, g), decay=True)

    def forward(self, x):
        return ops.dws_conv(x, self.weight, self.spec.pad)

    def extra_repr(self):
        return f"{self.spec.channels}, k={self.spec.kernel_size}"


class BatchNorm2d(Module):
    def __init__(self, spec: BatchNormSpec):
        super().__init__()
        self.spec = spec
        dt = get_default_dtype()
        if spec.affine:
            self.weight = Parameter(np.ones(spec.channels, dt))
            self.bias = Parameter(np.zeros(spec.channels, dt))
        else:
            self.weight = self.bias = None
        self.state = ops.BatchNormState(spec.channels, dt)
        self.running_mean = self.state.running_mean
        self.running_var = self.state.running_var

    def forward(self, x):
        s = self.spec
        return ops.batch_norm(x, self.state, self.training, self.weight, self.bias, s.eps, s.momentum)

    def extra_repr(self):
        return f"{self.spec.channels}, affine={self.spec.affine}"


class ReLU(Module):
    def forward(self, x):
        return ops.relu(x)


class MaxPool2d(Module):
    def __init__(self, window: int = 2, stride: int | None = None):
        super().__init__()
        self.window = window
        self.stride = window if stride is None else stride

    def forward(self, x):
        return ops.max_pool2d(x, self.window, self.stride)

    def extra_repr(self):
        return f"window={self.window}, stride={self.stride}"


class GlobalAvgPool(Module):
    def forward(self, x):
        return ops.global_avg_pool(x)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, seed=0):
        super().__init__()
        g = make_rng(seed)
        self.weight = Parameter(he_normal((out_features, in_features), in_features, g), decay=True)
        self.bias = Parameter(np.zeros(out_features, get_default_dtype()))

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)

    def extra_repr(self):
        return f"{self.weight.shape[1]}->{self.weight.shape[0]}"


def conv_bn_relu(d_in: int, d_out: int, k: int, stride: int = 1, seed=0) -> Sequential:
    conv = Conv2d(Conv2dSpec(d_in, d_out, k, stride=stride, padding=(k - 1) // 2), seed)
    return Sequential(conv, BatchNorm2d(BatchNormSpec(d_out)), ReLU())
