"""Parameter containers and the two layer primitives the network is built from."""

from __future__ import annotations

from typing import Iterator, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple, dtype: str = "f32") -> np.ndarray:
    """uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-a, a, size=shape).astype(T._DTYPES[dtype])


class Parameter:
    """A named trainable tensor plus its optimizer state."""

    __slots__ = ("value", "name", "momentum_buffer")

    def __init__(self, value: Tensor, name: str = ""):
        value.requires_grad = True
        if value.grad is None:
            value.grad = np.zeros_like(value.data)
        self.value = value
        self.name = name
        self.momentum_buffer: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        return f"Parameter({self.name or '<unnamed>'}, shape={self.shape})"


class Module:
    """Composable layer base: attribute assignment registers children.

    Parameters and submodules are discovered by name, depth-first, so the
    dotted paths from named_parameters() are stable across rebuilds with the
    same configuration.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        else:
            object.__setattr__(self, name, value)

    def __getattr__(self, name):
        for table in ("_params", "_modules", "_buffers"):
            d = object.__getattribute__(self, table)
            if name in d:
                return d[name]
        raise AttributeError(f"{type(self).__name__} has no attribute {name!r}")

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        self._buffers[name] = array

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for n, p in self._params.items():
            yield prefix + n, p
        for n, m in self._modules.items():
            yield from m.named_parameters(prefix + n + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for n, b in self._buffers.items():
            yield prefix + n, b
        for n, m in self._modules.items():
            yield from m.named_buffers(prefix + n + ".")

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def finalize_names(root: Module) -> None:
    """Stamp dotted paths onto every parameter and check uniqueness."""
    seen = set()
    for name, p in root.named_parameters():
        if name in seen:
            raise ConfigError(f"duplicate parameter name {name!r}")
        seen.add(name)
        p.name = name


class PointwiseLinear(Module):
    """1x1 convolution: an affine map applied independently at each grid cell."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 bias: bool = True, dtype: str = "f32"):
        super().__init__()
        if in_channels < 1 or out_channels < 1:
            raise ConfigError("channel counts must be positive")
        self.in_channels = in_channels
        self.out_channels = out_channels
        w = glorot_uniform(rng, in_channels, out_channels, (out_channels, in_channels), dtype)
        self.weight = Parameter(Tensor(w, dtype=dtype))
        if bias:
            self.bias = Parameter(Tensor(np.zeros(out_channels), dtype=dtype))
        else:
            object.__setattr__(self, "bias", None)

    def forward(self, x: Tensor) -> Tensor:
        b = self.bias.value if self.bias is not None else None
        return T.pointwise_linear(x, self.weight.value, b)


class BatchNorm(Module):
    """Per-channel batch normalization with running statistics."""

    def __init__(self, channels: int, dtype: str = "f32",
                 momentum: float = 0.1, epsilon: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.epsilon = epsilon
        np_dtype = T._DTYPES[dtype]
        self.gamma = Parameter(Tensor(np.ones(channels), dtype=dtype))
        self.beta = Parameter(Tensor(np.zeros(channels), dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np_dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=np_dtype))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim >= 2 and x.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {x.shape}")
        return T.batch_norm(
            x, self.gamma.value, self.beta.value,
            self._buffers["running_mean"], self._buffers["running_var"],
            "train" if self.training else "eval",
            momentum=self.momentum, epsilon=self.epsilon)
