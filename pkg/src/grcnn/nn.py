"""Module containers holding parameters and batch-norm statistics."""
from __future__ import annotations

from typing import Iterator, List, Optional, Tuple

import numpy as np

from . import functional as F
from .errors import ConfigError
from .tensor import Tensor, relu


class Parameter(Tensor):
    """A leaf tensor that is trained by the optimizer."""

    def __init__(self, data):
        super().__init__(np.array(data), requires_grad=True)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    """Fan-in scaled normal init, std = sqrt(2 / fan_in)."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Module:
    """Base class.  Parameters, buffers and submodules are discovered by
    walking instance attributes in insertion order; lists of modules are
    indexed by position.  A parameter reachable under several names (tied
    weights) is reported once, under the first name."""

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -- traversal -------------------------------------------------------
    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Module, Parameter)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(
                    isinstance(v, (Module, Parameter)) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        seen = set()

        def walk(mod, pre):
            if id(mod) in seen:
                return
            seen.add(id(mod))
            yield pre, mod
            for name, child in mod._children():
                if isinstance(child, Module):
                    yield from walk(child, f"{pre}.{name}" if pre else name)

        yield from walk(self, prefix)

    def named_parameters(self) -> List[Tuple[str, Parameter]]:
        out, seen = [], set()

        def walk(mod, pre):
            for name, child in mod._children():
                full = f"{pre}.{name}" if pre else name
                if isinstance(child, Parameter):
                    if id(child) not in seen:
                        seen.add(id(child))
                        out.append((full, child))
                else:
                    walk(child, full)

        walk(self, "")
        return out

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> List[Tuple[str, np.ndarray]]:
        out = []
        for name, mod in self.named_modules():
            for bname, arr in mod._own_buffers():
                out.append((f"{name}.{bname}" if name else bname, arr))
        return out

    def _own_buffers(self) -> List[Tuple[str, np.ndarray]]:
        return []

    # -- modes -----------------------------------------------------------
    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            mod.training = mode
            mod._on_mode_change(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def _on_mode_change(self, mode: bool) -> None:
        pass

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def to(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (model-wide dtype policy)."""
        dtype = np.dtype(dtype)
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, mod in self.named_modules():
            mod._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype) -> None:
        pass

    def load_arrays(self, params: dict, buffers: dict) -> None:
        """Copy values by name (used by checkpoints and weight transplants)."""
        for name, p in self.named_parameters():
            if name in params:
                p.data = np.array(params[name], dtype=p.dtype).reshape(p.shape)
        for name, arr in self.named_buffers():
            if name in buffers:
                arr[...] = buffers[name]


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size, stride=1, padding=None,
                 groups: int = 1, bias: bool = True, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32):
        kh, kw = F._pair(kernel_size)
        if padding is None:
            padding = (kh // 2, kw // 2)
        if in_channels % groups:
            raise ConfigError(f"in_channels={in_channels} is not divisible by groups={groups}")
        if out_channels % groups:
            raise ConfigError(f"out_channels={out_channels} is not divisible by groups={groups}")
        rng = np.random.default_rng() if rng is None else rng
        fan_in = in_channels // groups * kh * kw
        self.weight = Parameter(he_normal(rng, (out_channels, in_channels // groups, kh, kw), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None
        self._stride = F._pair(stride)
        self._padding = F._pair(padding)
        self._groups = groups

    @property
    def params(self) -> F.ConvParams:
        return F.ConvParams(self.weight, self.bias, self._groups, self._stride, self._padding)

    @property
    def groups(self) -> int:
        return self._groups

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.params)


class BatchNorm2d(Module):
    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        if not 0.0 < momentum < 1.0:
            raise ConfigError(f"batch-norm momentum must lie in (0, 1), got {momentum}")
        if eps <= 0:
            raise ConfigError(f"batch-norm eps must be positive, got {eps}")
        self.weight = Parameter(np.ones(num_features, dtype=dtype))
        self.bias = Parameter(np.zeros(num_features, dtype=dtype))
        self._state = F.BatchNormState(self.weight, self.bias,
                                       np.zeros(num_features, dtype=dtype),
                                       np.ones(num_features, dtype=dtype), eps, momentum)

    @property
    def state(self) -> F.BatchNormState:
        s = self._state
        # parameters may have been rebound by load/to()
        s.gamma, s.beta = self.weight, self.bias
        return s

    @property
    def running_mean(self) -> np.ndarray:
        return self._state.running_mean

    @property
    def running_var(self) -> np.ndarray:
        return self._state.running_var

    def _own_buffers(self):
        return [("running_mean", self._state.running_mean), ("running_var", self._state.running_var)]

    def _cast_buffers(self, dtype):
        self._state.running_mean = self._state.running_mean.astype(dtype)
        self._state.running_var = self._state.running_var.astype(dtype)

    def _on_mode_change(self, mode: bool) -> None:
        self._state.mode = "train" if mode else "eval"

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(x, self.state)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        self.weight = Parameter(he_normal(rng, (out_features, in_features), in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Dropout(Module):
    def __init__(self, rate: float = 0.2, seed: Optional[int] = None):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self._rng = np.random.default_rng(seed)

    def reseed(self, seed) -> None:
        self._rng = np.random.default_rng(seed)

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.rate, self.training, self._rng)


class BNReLUConv(Module):
    """Pre-activation unit: BN -> ReLU -> Conv.

    ``conv`` may be passed in to share one filter bank between several
    units while each keeps its own batch-norm.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size=3, stride=1, padding=None,
                 groups: int = 1, conv: Optional[Conv2d] = None, rng=None, dtype=np.float32,
                 bn_eps: float = 1e-5, bn_momentum: float = 0.1):
        self.bn = BatchNorm2d(in_channels, bn_eps, bn_momentum, dtype=dtype)
        self.conv = conv if conv is not None else Conv2d(
            in_channels, out_channels, kernel_size, stride, padding, groups, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(relu(self.bn(x)))
