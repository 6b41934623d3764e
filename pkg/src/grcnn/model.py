"""Assemble small-image GRCNN / RCNN classifiers from declarative specs.

Topology: stem conv -> (GRCL block, transition)* -> last GRCL block ->
BN -> ReLU -> global average pool -> dropout -> linear.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .errors import ConfigError, SpecError
from .layers import GRCL, GRCLConfig, TransitionLayer
from .nn import BatchNorm2d, Conv2d, Dropout, Linear, Module
from .tensor import Tensor, relu


@dataclass
class TransitionSpec:
    in_channels: int
    out_channels: int
    mid_channels: int = 0
    groups: int = 1


@dataclass
class ModelSpec:
    input_shape: Tuple[int, int, int] = (3, 32, 32)
    stem_channels: int = 64
    stem_kernel: int = 3
    stem_stride: int = 1
    blocks: List[GRCLConfig] = field(default_factory=list)
    transitions: List[TransitionSpec] = field(default_factory=list)
    dropout_rate: float = 0.2
    num_classes: int = 10

    def validate(self) -> None:
        if not self.blocks:
            raise SpecError("a model needs at least one block")
        if len(self.transitions) != len(self.blocks) - 1:
            raise SpecError(f"{len(self.blocks)} blocks need {len(self.blocks) - 1} transitions, "
                            f"got {len(self.transitions)}")
        if self.num_classes < 1:
            raise SpecError("num_classes must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise SpecError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.blocks[0].in_channels != self.stem_channels:
            raise SpecError(f"boundary stem -> block1: stem emits {self.stem_channels} channels, "
                            f"block1 expects {self.blocks[0].in_channels}")
        for i, tr in enumerate(self.transitions):
            if tr.in_channels != self.blocks[i].out_channels:
                raise SpecError(f"boundary block{i + 1} -> transition{i + 1}: block emits "
                                f"{self.blocks[i].out_channels} channels, transition expects {tr.in_channels}")
            if self.blocks[i + 1].in_channels != tr.out_channels:
                raise SpecError(f"boundary transition{i + 1} -> block{i + 2}: transition emits "
                                f"{tr.out_channels} channels, block expects {self.blocks[i + 1].in_channels}")
        _, h, w = self.input_shape
        h = F.conv_output_size(h, self.stem_kernel, self.stem_stride, self.stem_kernel // 2)
        w = F.conv_output_size(w, self.stem_kernel, self.stem_stride, self.stem_kernel // 2)
        for i in range(len(self.transitions)):
            if h % 2 or w % 2:
                raise SpecError(f"boundary block{i + 1} -> transition{i + 1}: feature map {h}x{w} is not even")
            h, w = h // 2, w // 2


class GRCNN(Module):
    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        spec.validate()
        self.spec = spec
        rng = np.random.default_rng(seed)
        c_in = spec.input_shape[0]
        k = spec.stem_kernel
        self.stem = Conv2d(c_in, spec.stem_channels, k, stride=spec.stem_stride, padding=k // 2,
                           rng=rng, dtype=dtype)
        blocks, transitions = [], []
        for i, cfg in enumerate(spec.blocks):
            blocks.append(GRCL(cfg, rng=rng, dtype=dtype))
            if i < len(spec.transitions):
                tr = spec.transitions[i]
                transitions.append(TransitionLayer(tr.in_channels, tr.out_channels, tr.mid_channels or None,
                                                   rng=rng, dtype=dtype, bn_eps=cfg.bn_eps,
                                                   bn_momentum=cfg.bn_momentum, groups=tr.groups))
        self.blocks = blocks
        self.transitions = transitions
        last = spec.blocks[-1]
        self.head_bn = BatchNorm2d(last.out_channels, last.bn_eps, last.bn_momentum, dtype=dtype)
        self.dropout = Dropout(spec.dropout_rate, seed=[seed, 3])
        self.head = Linear(last.out_channels, spec.num_classes, rng=rng, dtype=dtype)

    def features(self, x: Tensor) -> Tensor:
        h = self.stem(x)
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i < len(self.transitions):
                h = self.transitions[i](h)
        return relu(self.head_bn(h))

    def forward(self, x: Tensor) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        h = F.global_avg_pool(self.features(x))
        return self.head(self.dropout(h))

    def set_record(self, flag: bool) -> None:
        for block in self.blocks:
            block.record = flag
            if not flag:
                block.recorded_states, block.recorded_gates = [], []

    def set_gate_override(self, value: Optional[float]) -> None:
        for block in self.blocks:
            block.gate_override = value

    @property
    def dtype(self):
        return self.stem.weight.dtype


def build(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> GRCNN:
    """Fresh model for ``spec``; identical (spec, seed) give identical weights."""
    return GRCNN(spec, seed=seed, dtype=dtype)


def named_parameters(model: Module):
    return model.named_parameters()


def param_count(model: Module) -> int:
    """Trainable values (conv/linear weights and biases, BN gamma/beta);
    running statistics are not counted.  Tied weights count once."""
    return int(sum(p.size for p in model.parameters()))


def param_breakdown(model: GRCNN) -> Dict[str, int]:
    """Parameter count per component, in forward order."""
    out: Dict[str, int] = {}
    for name, p in model.named_parameters():
        parts = name.split(".")
        if parts[0] == "blocks":
            key = f"block{int(parts[1]) + 1}.{parts[2]}"
        elif parts[0] == "transitions":
            key = f"transition{int(parts[1]) + 1}"
        else:
            key = parts[0]
        out[key] = out.get(key, 0) + p.size
    return out


# -- flat option form ----------------------------------------------------------
MODEL_KEYS = {
    "input_shape": "C,H,W of the input images",
    "stem_channels": "filters of the first convolution",
    "stem_kernel": "kernel size of the first convolution",
    "stem_stride": "stride of the first convolution",
    "variant": "rcl | grcl_original | grcl_improved",
    "iterations": "comma list, iterations T per block",
    "channels": "comma list, feature maps per block (bottleneck3: 3x3 filters; output = expansion * maps)",
    "transition_channels": "comma list, output channels of each transition (default: next block width)",
    "transition_mid": "comma list, bottleneck width of each transition (default: out/4)",
    "groups_transition": "groups of the 3x3 conv inside transitions",
    "recurrent_transform": "simple_bn_relu_conv | bottleneck3",
    "expansion_rate": "bottleneck3 expansion rate",
    "groups_feedforward": "groups of the feedforward conv",
    "groups_gate": "groups of the 1x1 gate convs",
    "groups_recurrent": "groups of the 3x3 conv in a bottleneck3 recurrent transform",
    "tie_recurrent": "share recurrent filters across iterations (true/false)",
    "tie_gate": "share recurrent gate filters across iterations (true/false)",
    "bn_eps": "batch-norm epsilon",
    "bn_momentum": "batch-norm running-stat momentum",
    "dropout": "dropout rate before the classifier",
    "num_classes": "classifier outputs",
}

_DEFAULT_OPTIONS = {
    "input_shape": "3,32,32", "stem_channels": "64", "stem_kernel": "3", "stem_stride": "1",
    "variant": "grcl_improved", "iterations": "2,2,2", "channels": "128,128,128",
    "transition_channels": "", "transition_mid": "", "groups_transition": "1",
    "recurrent_transform": "simple_bn_relu_conv", "expansion_rate": "4",
    "groups_feedforward": "16", "groups_gate": "16", "groups_recurrent": "1",
    "tie_recurrent": "false", "tie_gate": "true", "bn_eps": "1e-5", "bn_momentum": "0.1",
    "dropout": "0.2", "num_classes": "10",
}


def _ints(text: str) -> List[int]:
    text = str(text).strip()
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def spec_from_options(options: Dict[str, str]) -> ModelSpec:
    """Build a ModelSpec from flat ``key -> string`` options."""
    unknown = sorted(set(options) - set(MODEL_KEYS))
    if unknown:
        raise ConfigError(f"unknown model keys {unknown}; valid keys: {sorted(MODEL_KEYS)}")
    o = dict(_DEFAULT_OPTIONS)
    o.update({k: str(v) for k, v in options.items()})
    try:
        iterations = _ints(o["iterations"])
        maps = _ints(o["channels"])
        if len(iterations) != len(maps):
            raise SpecError(f"iterations ({len(iterations)}) and channels ({len(maps)}) differ in length")
        transform = o["recurrent_transform"]
        expansion = int(o["expansion_rate"])
        outs = [m * expansion if transform == "bottleneck3" else m for m in maps]
        tr_out = _ints(o["transition_channels"]) or outs[1:]
        tr_mid = _ints(o["transition_mid"]) or [0] * len(tr_out)
        if len(tr_out) != len(maps) - 1 or len(tr_mid) != len(tr_out):
            raise SpecError(f"{len(maps)} blocks need {len(maps) - 1} transition entries")
        variant = o["variant"]
        common = dict(
            variant=variant, recurrent_transform=transform, expansion_rate=expansion,
            groups_feedforward=int(o["groups_feedforward"]), groups_gate=int(o["groups_gate"]),
            groups_recurrent=int(o["groups_recurrent"]),
            tie_recurrent_weights=parse_bool(o["tie_recurrent"]), tie_gate_weights=parse_bool(o["tie_gate"]),
            bn_eps=float(o["bn_eps"]), bn_momentum=float(o["bn_momentum"]))
        stem = int(o["stem_channels"])
        blocks = []
        for i, (t, m, c_out) in enumerate(zip(iterations, maps, outs)):
            c_in = stem if i == 0 else tr_out[i - 1]
            blocks.append(GRCLConfig(iterations=t, in_channels=c_in, out_channels=c_out,
                                     bottleneck_mid_channels=m if transform == "bottleneck3" else 0,
                                     **common))
        transitions = [TransitionSpec(outs[i], tr_out[i], tr_mid[i], int(o["groups_transition"]))
                       for i in range(len(tr_out))]
        shape = tuple(_ints(o["input_shape"]))
        if len(shape) != 3:
            raise SpecError(f"input_shape must be C,H,W, got {o['input_shape']!r}")
        spec = ModelSpec(input_shape=shape, stem_channels=stem, stem_kernel=int(o["stem_kernel"]),
                         stem_stride=int(o["stem_stride"]), blocks=blocks, transitions=transitions,
                         dropout_rate=float(o["dropout"]), num_classes=int(o["num_classes"]))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad model option: {exc}") from exc
    spec.validate()
    return spec


def spec_to_options(spec: ModelSpec) -> Dict[str, str]:
    """Inverse of :func:`spec_from_options` for specs with uniform blocks."""
    b0 = spec.blocks[0]
    shared = ("variant", "recurrent_transform", "expansion_rate", "groups_feedforward", "groups_gate",
              "groups_recurrent", "tie_recurrent_weights", "tie_gate_weights", "bn_eps", "bn_momentum")
    for b in spec.blocks[1:]:
        for attr in shared:
            if getattr(b, attr) != getattr(b0, attr):
                raise ConfigError(f"blocks differ in {attr}; the flat form needs uniform blocks")
    bottleneck = b0.recurrent_transform == "bottleneck3"
    maps = [b.bottleneck_mid_channels if bottleneck else b.out_channels for b in spec.blocks]
    join = lambda xs: ",".join(str(x) for x in xs)
    groups_tr = {t.groups for t in spec.transitions} or {1}
    if len(groups_tr) != 1:
        raise ConfigError("transitions differ in groups; the flat form needs uniform transitions")
    return {
        "input_shape": join(spec.input_shape), "stem_channels": str(spec.stem_channels),
        "stem_kernel": str(spec.stem_kernel), "stem_stride": str(spec.stem_stride),
        "variant": b0.variant, "iterations": join(b.iterations for b in spec.blocks),
        "channels": join(maps), "transition_channels": join(t.out_channels for t in spec.transitions),
        "transition_mid": join(t.mid_channels for t in spec.transitions),
        "groups_transition": str(groups_tr.pop()),
        "recurrent_transform": b0.recurrent_transform, "expansion_rate": str(b0.expansion_rate),
        "groups_feedforward": str(b0.groups_feedforward), "groups_gate": str(b0.groups_gate),
        "groups_recurrent": str(b0.groups_recurrent),
        "tie_recurrent": str(b0.tie_recurrent_weights).lower(), "tie_gate": str(b0.tie_gate_weights).lower(),
        "bn_eps": repr(b0.bn_eps), "bn_momentum": repr(b0.bn_momentum),
        "dropout": repr(spec.dropout_rate), "num_classes": str(spec.num_classes),
    }


def spec_to_text(spec: ModelSpec) -> str:
    lines = ["[model]"] + [f"{k} = {v}" for k, v in spec_to_options(spec).items()]
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> ModelSpec:
    from .config import parse_config
    sections = parse_config(text, allowed={"model": set(MODEL_KEYS)})
    return spec_from_options(sections.get("model", {}))


# -- presets ------------------------------------------------------------------
def small_analysis_spec(variant: str = "grcl_improved", iterations: Sequence[int] = (2, 2, 2),
                        maps: Sequence[int] = (128, 128, 128), tied: bool = True,
                        num_classes: int = 10, input_shape=(3, 32, 32)) -> ModelSpec:
    """Three simple-transform blocks; only the improved variant uses grouped convs."""
    groups = 16 if variant == "grcl_improved" else 1
    return spec_from_options({
        "input_shape": ",".join(map(str, input_shape)), "variant": variant,
        "iterations": ",".join(map(str, iterations)), "channels": ",".join(map(str, maps)),
        "groups_feedforward": str(groups), "groups_gate": str(groups),
        "tie_recurrent": str(tied).lower(), "tie_gate": str(tied).lower(), "num_classes": str(num_classes),
    })


def grcnn56_spec(num_classes: int = 10) -> ModelSpec:
    return spec_from_options({
        "iterations": "3,5,7", "channels": "128,160,192", "recurrent_transform": "bottleneck3",
        "expansion_rate": "4", "groups_feedforward": "16", "groups_gate": "16", "groups_recurrent": "16",
        "tie_recurrent": "false", "tie_gate": "true", "num_classes": str(num_classes),
    })


def grcnn110_spec(num_classes: int = 10) -> ModelSpec:
    spec = grcnn56_spec(num_classes)
    opts = spec_to_options(spec)
    opts["iterations"] = "6,9,18"
    return spec_from_options(opts)


def mnist_small_spec(variant: str = "grcl_improved") -> ModelSpec:
    return spec_from_options({
        "input_shape": "1,28,28", "stem_channels": "32", "variant": variant,
        "iterations": "2,2,2", "channels": "32,32,32",
        "tie_recurrent": "false", "tie_gate": "true", "dropout": "0.2",
    })


def parameter_report(spec: ModelSpec, title: str = "Parameter accounting") -> str:
    """Markdown table of per-component parameter counts for ``spec``."""
    model = build(spec)
    total = param_count(model)
    opts = spec_to_options(spec)
    lines = [f"# {title}", "",
             f"Iterations per block: {opts['iterations']}; feature maps: {opts['channels']}; "
             f"recurrent transform: {opts['recurrent_transform']} (expansion {opts['expansion_rate']}); "
             f"groups: feedforward {opts['groups_feedforward']}, gate {opts['groups_gate']}, "
             f"recurrent 3x3 {opts['groups_recurrent']}; tied recurrent: {opts['tie_recurrent']}; "
             f"tied gates: {opts['tie_gate']}.", "",
             "| component | parameters | share |", "|---|---:|---:|"]
    for name, count in param_breakdown(model).items():
        lines.append(f"| {name} | {count:,} | {100.0 * count / total:.2f}% |")
    lines += [f"| **total** | **{total:,}** | 100.00% |", "",
              "Counts cover conv and linear weights and biases plus batch-norm scale and shift. "
              "Running statistics are excluded, and a filter bank shared across iterations is counted once.", ""]
    return "\n".join(lines)
