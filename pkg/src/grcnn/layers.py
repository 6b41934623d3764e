"""Recurrent convolutional blocks (RCL, original GRCL, improved GRCL) and
the downsampling transition layer.

A block with ``iterations = T`` unrolls the states ``x(0) ... x(T-1)``::

    x(0) = TF(u)
    rcl:            x(t) = TF(u) + TR_t(x(t-1))
    grcl_original:  x(t) = TF(u) + G(t) * TR_t(x(t-1))
    grcl_improved:  x(t) = TF(u) + sum_{n=1..t} G(n) * TR_n(x(n-1))

with ``G(t) = sigmoid(TgF(u) + TgR_t(x(t-1)))`` and only ``x(T-1)`` passed
on to the next layer.  Every transform is pre-activated (BN -> ReLU ->
Conv).  Recurrent filter banks may be tied across steps; batch-norm
statistics and affine parameters never are.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DimensionError, IterationRangeError
from .nn import BatchNorm2d, BNReLUConv, Conv2d, Module
from .tensor import Tensor, add, relu, sigmoid

VARIANTS = ("rcl", "grcl_original", "grcl_improved")
TRANSFORMS = ("simple_bn_relu_conv", "bottleneck3")


@dataclass
class GRCLConfig:
    variant: str = "grcl_improved"
    iterations: int = 3
    in_channels: int = 64
    out_channels: int = 128
    recurrent_transform: str = "simple_bn_relu_conv"
    bottleneck_mid_channels: int = 0
    expansion_rate: int = 4
    groups_feedforward: int = 16
    groups_gate: int = 16
    # grouping of the 3x3 conv inside a bottleneck recurrent transform
    groups_recurrent: int = 1
    tie_recurrent_weights: bool = False
    tie_gate_weights: bool = True
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.recurrent_transform not in TRANSFORMS:
            raise ConfigError(f"recurrent_transform must be one of {TRANSFORMS}, got {self.recurrent_transform!r}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        for name, channels, groups in (
                ("in_channels", self.in_channels, self.groups_feedforward),
                ("out_channels", self.out_channels, self.groups_feedforward)):
            if groups < 1 or channels % groups:
                raise ConfigError(f"{name}={channels} is not divisible by groups_feedforward={groups}")
        if self.variant != "rcl":
            for name, channels in (("in_channels", self.in_channels), ("out_channels", self.out_channels)):
                if self.groups_gate < 1 or channels % self.groups_gate:
                    raise ConfigError(f"{name}={channels} is not divisible by groups_gate={self.groups_gate}")
        if self.recurrent_transform == "bottleneck3":
            if self.bottleneck_mid_channels < 1:
                raise ConfigError("bottleneck3 needs bottleneck_mid_channels >= 1")
            if self.expansion_rate * self.bottleneck_mid_channels != self.out_channels:
                raise ConfigError(
                    f"expansion_rate ({self.expansion_rate}) * bottleneck_mid_channels "
                    f"({self.bottleneck_mid_channels}) != out_channels ({self.out_channels})")
            if self.bottleneck_mid_channels % self.groups_recurrent:
                raise ConfigError(
                    f"bottleneck_mid_channels={self.bottleneck_mid_channels} is not divisible by "
                    f"groups_recurrent={self.groups_recurrent}")

    @property
    def gated(self) -> bool:
        return self.variant != "rcl"


class SimpleRecurrentTransform(Module):
    """BN -> ReLU -> 3x3 conv, channel-preserving."""

    def __init__(self, channels: int, cfg: GRCLConfig, rng, dtype, shared: Optional["SimpleRecurrentTransform"] = None):
        self.unit = BNReLUConv(channels, channels, 3, groups=1,
                               conv=shared.unit.conv if shared is not None else None,
                               rng=rng, dtype=dtype, bn_eps=cfg.bn_eps, bn_momentum=cfg.bn_momentum)

    def convs(self) -> List[Conv2d]:
        return [self.unit.conv]

    def forward(self, x: Tensor) -> Tensor:
        return self.unit(x)


class BottleneckTransform(Module):
    """Pre-activated 1x1 (reduce) -> 3x3 -> 1x1 (expand) stack."""

    def __init__(self, channels: int, cfg: GRCLConfig, rng, dtype, shared: Optional["BottleneckTransform"] = None):
        mid = cfg.bottleneck_mid_channels
        kw = dict(rng=rng, dtype=dtype, bn_eps=cfg.bn_eps, bn_momentum=cfg.bn_momentum)
        sc = shared.convs() if shared is not None else [None, None, None]
        self.reduce = BNReLUConv(channels, mid, 1, conv=sc[0], **kw)
        self.spatial = BNReLUConv(mid, mid, 3, groups=cfg.groups_recurrent, conv=sc[1], **kw)
        self.expand = BNReLUConv(mid, channels, 1, conv=sc[2], **kw)

    def convs(self) -> List[Conv2d]:
        return [self.reduce.conv, self.spatial.conv, self.expand.conv]

    def forward(self, x: Tensor) -> Tensor:
        return self.expand(self.spatial(self.reduce(x)))


def _make_recurrent(cfg: GRCLConfig, rng, dtype, shared=None) -> Module:
    cls = SimpleRecurrentTransform if cfg.recurrent_transform == "simple_bn_relu_conv" else BottleneckTransform
    return cls(cfg.out_channels, cfg, rng, dtype, shared)


class GRCL(Module):
    """One recurrent convolutional block; the variant is chosen by ``cfg``.

    Attributes
    ----------
    gate_override : float or None
        When set, every gate is replaced by this constant (the sigmoid path is
        bypassed).  Used for the degeneration and closed-gate checks.
    record : bool
        When true, ``recorded_states`` and ``recorded_gates`` hold the
        tensors of the last forward pass.
    """

    def __init__(self, cfg: GRCLConfig, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        self.cfg = cfg
        steps = cfg.iterations - 1
        bn = dict(dtype=dtype, bn_eps=cfg.bn_eps, bn_momentum=cfg.bn_momentum)

        self.feedforward = BNReLUConv(cfg.in_channels, cfg.out_channels, 3,
                                      groups=cfg.groups_feedforward, rng=rng, **bn)
        recurrent = []
        for _ in range(steps):
            shared = recurrent[0] if cfg.tie_recurrent_weights and recurrent else None
            recurrent.append(_make_recurrent(cfg, rng, dtype, shared))
        self.recurrent = recurrent

        if cfg.gated:
            self.gate_ff = BNReLUConv(cfg.in_channels, cfg.out_channels, 1, groups=cfg.groups_gate, rng=rng, **bn)
            gate_rec = []
            for _ in range(steps):
                shared = gate_rec[0].conv if cfg.tie_gate_weights and gate_rec else None
                gate_rec.append(BNReLUConv(cfg.out_channels, cfg.out_channels, 1, groups=cfg.groups_gate,
                                           conv=shared, rng=rng, **bn))
            self.gate_rec = gate_rec

        self.gate_override: Optional[float] = None
        self.cache_gate_ff = True
        self.record = False
        self.recorded_states: List[Tensor] = []
        self.recorded_gates: List[Tensor] = []

    # -- pieces -----------------------------------------------------------
    def _check_input(self, u: Tensor) -> None:
        if u.ndim != 4:
            raise DimensionError(f"GRCL expects NCHW input, got shape {u.shape}")
        if u.shape[1] != self.cfg.in_channels:
            raise DimensionError(
                f"channel axis (1): input has {u.shape[1]} channels, block expects {self.cfg.in_channels}")

    def transform_ff(self, u: Tensor) -> Tensor:
        """Feedforward transform TF(u); computed once per forward pass."""
        self._check_input(u)
        return self.feedforward(u)

    def transform_rec(self, x_prev: Tensor, t: int) -> Tensor:
        """Recurrent transform feeding state ``x(t)``, for ``1 <= t < T``."""
        if not 1 <= t < self.cfg.iterations:
            raise IterationRangeError(f"recurrent step {t} outside [1, {self.cfg.iterations})")
        return self.recurrent[t - 1](x_prev)

    def gate(self, u: Tensor, x_prev: Optional[Tensor], t: int, gate_ff: Optional[Tensor] = None) -> Tensor:
        """Gate ``G(t)`` with values in (0, 1).

        For ``t == 0`` the previous state is zero by convention, so only the
        feedforward gate term contributes.  ``gate_ff`` may carry a
        precomputed ``TgF(u)``.
        """
        if not self.cfg.gated:
            raise ConfigError("rcl blocks have no gates")
        if not 0 <= t < self.cfg.iterations:
            raise IterationRangeError(f"gate index {t} outside [0, {self.cfg.iterations})")
        ff = gate_ff if gate_ff is not None else self.gate_ff(u)
        if t == 0:
            return sigmoid(ff)
        return sigmoid(add(ff, self.gate_rec[t - 1](x_prev)))

    def recurrent_parameter_sets(self) -> List[List[Conv2d]]:
        return [r.convs() for r in self.recurrent]

    # -- forward ----------------------------------------------------------
    def forward(self, u: Tensor) -> Tensor:
        cfg = self.cfg
        ff = self.transform_ff(u)
        x = ff
        states, gates = [x], []
        gate_ff_cached = None
        if cfg.gated and self.gate_override is None and cfg.iterations > 1 and self.cache_gate_ff:
            gate_ff_cached = self.gate_ff(u)
        acc = None
        for t in range(1, cfg.iterations):
            r = self.transform_rec(x, t)
            if cfg.variant == "rcl":
                x = ff + r
            else:
                if self.gate_override is not None:
                    g = self.gate_override
                else:
                    g = self.gate(u, x, t, gate_ff_cached)
                    if self.record:
                        gates.append(g)
                term = r * g
                if cfg.variant == "grcl_original":
                    x = ff + term
                else:
                    acc = term if acc is None else acc + term
                    x = ff + acc
            states.append(x)
        if self.record:
            self.recorded_states = states
            self.recorded_gates = gates
        return x


class TransitionLayer(Module):
    """Stride-2 pre-activation bottleneck with a 1x1 stride-2 projection
    shortcut; halves H and W and maps ``in_channels`` to ``out_channels``."""

    def __init__(self, in_channels: int, out_channels: int, mid_channels: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32,
                 bn_eps: float = 1e-5, bn_momentum: float = 0.1, groups: int = 1):
        rng = np.random.default_rng() if rng is None else rng
        mid = mid_channels if mid_channels else max(out_channels // 4, 1)
        self.in_channels, self.out_channels, self.mid_channels = in_channels, out_channels, mid
        kw = dict(rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(in_channels, bn_eps, bn_momentum, dtype=dtype)
        self.reduce = Conv2d(in_channels, mid, 1, **kw)
        self.spatial = BNReLUConv(mid, mid, 3, stride=2, padding=1, groups=groups,
                                  bn_eps=bn_eps, bn_momentum=bn_momentum, **kw)
        self.expand = BNReLUConv(mid, out_channels, 1, bn_eps=bn_eps, bn_momentum=bn_momentum, **kw)
        self.shortcut = Conv2d(in_channels, out_channels, 1, stride=2, padding=0, **kw)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise DimensionError(f"transition expects NCHW input, got shape {x.shape}")
        if x.shape[1] != self.in_channels:
            raise DimensionError(
                f"channel axis (1): input has {x.shape[1]} channels, transition expects {self.in_channels}")
        for axis in (2, 3):
            if x.shape[axis] % 2:
                raise DimensionError(f"spatial axis ({axis}) has odd size {x.shape[axis]}; transition needs even")
        a = relu(self.bn(x))
        return self.expand(self.spatial(self.reduce(a))) + self.shortcut(a)
