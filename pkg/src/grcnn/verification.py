"""Self-checks: the finite-difference gradient suite and the structural
oracles (degeneration, closed gates, receptive-field support, partial-sum
accumulation).  Shared by the ``gradcheck`` and ``verify`` commands."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, List, Tuple

import numpy as np

from . import functional as F
from .gradcheck import gradcheck
from .layers import GRCL, GRCLConfig, TransitionLayer
from .oracles import accumulate_partial_sums, perturbation_support, rcl_support_side
from .tensor import Tensor, mul_elementwise, no_grad, relu, sigmoid

GRAD_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def projected(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Scalar ``sum(out * R)`` with a fixed random ``R``; unlike a plain sum it
    does not vanish through batch normalization."""
    r = Tensor(rng.standard_normal(out.shape))
    return mul_elementwise(out, r).sum()


def _swap_param(owner, attr: str, forward: Callable[[], Tensor], proj_seed: int) -> Callable[[Tensor], Tensor]:
    def fn(t: Tensor) -> Tensor:
        saved = getattr(owner, attr)
        setattr(owner, attr, t)
        try:
            out = forward()
        finally:
            setattr(owner, attr, saved)
        return projected(out, np.random.default_rng(proj_seed))
    return fn


def _input_fn(forward: Callable[[Tensor], Tensor], proj_seed: int) -> Callable[[Tensor], Tensor]:
    return lambda t: projected(forward(t), np.random.default_rng(proj_seed))


# -- gradient cases ----------------------------------------------------------------
def _op_cases(rng: np.random.Generator) -> Iterator[Tuple[str, Callable, np.ndarray]]:
    s = int(rng.integers(1 << 31))
    x = rng.standard_normal((2, 3, 4, 4))
    other = Tensor(rng.standard_normal((2, 3, 4, 4)))
    chan = Tensor(rng.standard_normal((2, 3, 1, 1)))
    yield "add", _input_fn(lambda t: t + other, s), x
    yield "add_broadcast", _input_fn(lambda t: other + t, s), rng.standard_normal((2, 3, 1, 1))
    yield "mul_elementwise", _input_fn(lambda t: t * other, s), x
    yield "mul_broadcast", _input_fn(lambda t: other * t, s), rng.standard_normal((2, 3, 1, 1))
    yield "mul_scalar", _input_fn(lambda t: t * 1.7 - chan, s), x
    yield "relu", _input_fn(relu, s), x
    yield "sigmoid", _input_fn(sigmoid, s), x * 3
    yield "sum", lambda t: (t * t).sum(), x
    yield "mean", lambda t: (t * other).mean(), x
    yield "reshape", _input_fn(lambda t: t.reshape(2, 48), s), x
    yield "getitem", _input_fn(lambda t: t[:, 1:, ::2], s), x

    w = rng.standard_normal((6, 3, 3, 3))
    wg = rng.standard_normal((6, 1, 3, 3))
    yield "conv2d", _input_fn(lambda t: F.conv2d(t, F.ConvParams(Tensor(w), None, 1, 1, 1)), s), x
    yield "conv2d_weight", lambda t: projected(F.conv2d(Tensor(x), F.ConvParams(t, Tensor(w[:, 0, 0, 0]), 1, 2, 1)),
                                                np.random.default_rng(s)), w
    yield "conv2d_grouped", _input_fn(lambda t: F.conv2d(t, F.ConvParams(Tensor(wg), None, 3, 1, 1)), s), x
    yield "conv2d_1x1", _input_fn(lambda t: F.conv2d(t, F.ConvParams(Tensor(w[:, :, :1, :1]), None, 1, 1, 0)), s), x

    def bn(mode):
        def f(t):
            st = F.BatchNormState(Tensor(np.array([1.2, 0.7, 1.0])), Tensor(np.array([0.1, -0.2, 0.3])),
                                  np.array([0.1, 0.0, -0.1]), np.array([1.5, 0.8, 1.1]), mode=mode)
            return F.batchnorm2d(t, st)
        return f
    yield "batchnorm_train", _input_fn(bn("train"), s), x
    yield "batchnorm_eval", _input_fn(bn("eval"), s), x
    yield "maxpool2d", _input_fn(lambda t: F.maxpool2d(t, 2), s), x
    yield "global_avg_pool", _input_fn(F.global_avg_pool, s), x
    lw = Tensor(rng.standard_normal((5, 12)))
    yield "linear", _input_fn(lambda t: F.linear(t, lw, None), s), rng.standard_normal((4, 12))
    labels = rng.integers(0, 5, size=4)
    yield "softmax_cross_entropy", lambda t: F.softmax_cross_entropy(t, labels), rng.standard_normal((4, 5))
    yield "dropout", _input_fn(lambda t: F.dropout(t, 0.3, True, np.random.default_rng(s)), s), x


def layer_configs() -> Iterator[Tuple[str, GRCLConfig]]:
    """Every variant x (tied, untied) x (simple, bottleneck3) at toy size."""
    for variant in ("rcl", "grcl_original", "grcl_improved"):
        for tied in (True, False):
            for transform in ("simple_bn_relu_conv", "bottleneck3"):
                mid = 2 if transform == "bottleneck3" else 0
                cfg = GRCLConfig(variant=variant, iterations=3, in_channels=4, out_channels=4,
                                 recurrent_transform=transform, bottleneck_mid_channels=mid, expansion_rate=2,
                                 groups_feedforward=2, groups_gate=2, tie_recurrent_weights=tied,
                                 tie_gate_weights=tied)
                yield f"{variant}/{'tied' if tied else 'untied'}/{transform}", cfg


def _layer_cases(rng: np.random.Generator) -> Iterator[Tuple[str, Callable, np.ndarray]]:
    for name, cfg in layer_configs():
        block = GRCL(cfg, rng=np.random.default_rng(int(rng.integers(1 << 31))), dtype=np.float64)
        s = int(rng.integers(1 << 31))
        x = rng.standard_normal((2, 4, 4, 4))
        u = Tensor(x)
        yield f"{name}:input", _input_fn(block, s), x
        conv = block.recurrent[-1].convs()[0]
        yield f"{name}:recurrent_weight", _swap_param(conv, "weight", lambda: block(u), s), conv.weight.data
        rec = block.recurrent[-1]
        bn = rec.unit.bn if hasattr(rec, "unit") else rec.reduce.bn
        yield f"{name}:recurrent_bn_gamma", _swap_param(bn, "weight", lambda: block(u), s), bn.weight.data
        if cfg.gated:
            g = block.gate_rec[-1].conv
            yield f"{name}:gate_weight", _swap_param(g, "weight", lambda: block(u), s), g.weight.data
    tr = TransitionLayer(4, 8, 2, rng=np.random.default_rng(int(rng.integers(1 << 31))), dtype=np.float64)
    yield "transition:input", _input_fn(tr, int(rng.integers(1 << 31))), rng.standard_normal((2, 4, 4, 4))


def gradient_suite(instances: int = 3, seed: int = 0, eps: float = 1e-5) -> List[Tuple[str, float]]:
    """Worst relative error per case over ``instances`` random draws."""
    worst = {}
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        for cases in (_op_cases(rng), _layer_cases(rng)):
            for name, fn, point in cases:
                err = gradcheck(fn, point, eps)
                worst[name] = max(worst.get(name, 0.0), err)
    return list(worst.items())


# -- structural oracles --------------------------------------------------------------
def _toy_block(variant: str, iterations: int, seed: int, dtype=np.float64, **kw) -> GRCL:
    cfg = GRCLConfig(variant=variant, iterations=iterations, in_channels=4, out_channels=8,
                     groups_feedforward=1, groups_gate=1, **kw)
    return GRCL(cfg, rng=np.random.default_rng(seed), dtype=dtype)


def check_degeneration(iterations=(1, 2, 3), seed: int = 0) -> CheckResult:
    """grcl_original with every gate forced to 1 reproduces rcl bit for bit."""
    worst = 0.0
    identical = True
    for t in iterations:
        rcl = _toy_block("rcl", t, seed)
        gated = _toy_block("grcl_original", t, seed)
        # equal seeds already give equal draws; copying makes it explicit
        for (_, p_dst), (_, p_src) in zip(_core_params(gated), _core_params(rcl)):
            p_dst.data = p_src.data.copy()
        gated.gate_override = 1.0
        x = Tensor(np.random.default_rng([seed, t]).standard_normal((2, 4, 6, 6)))
        a, b = rcl(x).data, gated(x).data
        identical &= bool(np.array_equal(a, b))
        worst = max(worst, float(np.abs(a - b).max()))
    return CheckResult("degeneration (gates=1 equals rcl)", identical, f"T={list(iterations)} max|diff|={worst:g}")


def _core_params(block: GRCL):
    return [(n, p) for n, p in block.named_parameters() if n.startswith(("feedforward", "recurrent"))]


def check_closed_gate(iterations=(1, 2, 3, 4), seed: int = 0) -> CheckResult:
    """grcl_improved with every gate forced to 0 returns the feedforward term."""
    worst = 0.0
    for t in iterations:
        block = _toy_block("grcl_improved", t, seed)
        block.gate_override = 0.0
        x = Tensor(np.random.default_rng([seed, t]).standard_normal((2, 4, 6, 6)))
        worst = max(worst, float(np.abs(block(x).data - block.transform_ff(x).data).max()))
    return CheckResult("closed gates return feedforward", worst == 0.0,
                       f"T={list(iterations)} max|diff|={worst:g}")


def rcl_center_support(steps: int, size: int = 15, seed: int = 0) -> np.ndarray:
    """Brute-force input support of the centre neuron of ``x(steps)`` in a
    3x3 rcl block.  Weights and inputs are positive and BN runs in eval mode,
    so no ReLU cuts a path and the support is purely geometric."""
    cfg = GRCLConfig(variant="rcl", iterations=steps + 1, in_channels=2, out_channels=2,
                     groups_feedforward=1, groups_gate=1)
    block = GRCL(cfg, rng=np.random.default_rng(seed), dtype=np.float64)
    for _, p in block.named_parameters():
        p.data = np.abs(p.data) + 0.1
    block.eval()
    block.record = True
    c = size // 2

    def fn(arr: np.ndarray) -> float:
        with no_grad():
            block(Tensor(arr))
        return float(block.recorded_states[steps].data[0, 0, c, c])

    x = np.random.default_rng(seed).uniform(0.5, 1.5, size=(1, 2, size, size))
    return perturbation_support(fn, x)


def check_rf_support(steps=(0, 1, 2, 3), size: int = 15) -> CheckResult:
    counts, ok = [], True
    for t in steps:
        n = int(rcl_center_support(t, size).sum())
        counts.append(n)
        ok &= n == rcl_support_side(3, t) ** 2
    return CheckResult("rcl support grows as (3+2t)^2", ok, f"t={list(steps)} support={counts}")


def check_accumulation(instances: int = 10, seed: int = 0, tol: float = 1e-6) -> CheckResult:
    """grcl_improved (T=3, float32) against explicit partial sums."""
    worst = 0.0
    for i in range(instances):
        block = _toy_block("grcl_improved", 3, seed + i, dtype=np.float32)
        block.record = True
        u = Tensor(np.random.default_rng([seed, i]).standard_normal((2, 4, 6, 6)).astype(np.float32))
        with no_grad():
            out = block(u).data
            ff = block.transform_ff(u).data
            states = accumulate_partial_sums(
                ff,
                lambda n, prev: block.gate(u, Tensor(prev), n).data,
                lambda n, prev: block.transform_rec(Tensor(prev), n).data,
                3)
        worst = max(worst, float(np.abs(out - states[-1]).max()))
    return CheckResult("accumulation matches partial sums", worst <= tol, f"max|diff|={worst:.3g} (tol {tol:g})")


def oracle_suite() -> List[CheckResult]:
    return [check_degeneration(), check_closed_gate(), check_rf_support(), check_accumulation()]
