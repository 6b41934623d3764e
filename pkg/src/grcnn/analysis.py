"""Gate-output statistics and gradient-based effective receptive fields."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import Dataset
from .errors import DimensionError, NoGatesError
from .model import GRCNN
from .nn import Module
from .tensor import Tensor, no_grad

GATE_MEAN_COLUMNS = ("block", "iteration", "channel", "mean_gate")
GATE_STD_COLUMNS = ("block", "iteration", "std_over_images")
GATE_VAR_COLUMNS = ("block", "channel", "mean_within_block_variance")
RF_COLUMNS = ("y", "x", "strength", "inside")


@dataclass
class GateStats:
    """Gate outputs, spatially averaged to one value per feature map.

    ``mean[b]`` has shape (iterations_b, C_b): mean over images.
    ``image_std[b]`` has shape (iterations_b,): std over images of the
    per-image value averaged over channels.
    ``within_block_var[b]`` has shape (C_b,): variance over the block's
    iterations for one image and channel, averaged over images.
    Iterations are the recurrent steps ``t = 1 .. T-1``.
    """

    mean: List[np.ndarray] = field(default_factory=list)
    image_std: List[np.ndarray] = field(default_factory=list)
    within_block_var: List[np.ndarray] = field(default_factory=list)
    images: int = 0


@dataclass
class RFProfile:
    locus: Tuple[int, ...]
    strength: np.ndarray
    rho: float
    effective_size: int
    zero_gradient: bool = False

    @property
    def support(self) -> np.ndarray:
        return self.strength > 0


def collect_gate_stats(model: GRCNN, ds: Dataset, max_images: int, batch_size: int = 100) -> GateStats:
    """Run ``max_images`` images through ``model`` in eval mode and aggregate
    the recorded gate maps."""
    gated = [i for i, b in enumerate(model.blocks) if b.cfg.gated and b.cfg.iterations > 1]
    if not gated:
        raise NoGatesError("model has no gated recurrent blocks")
    n = min(max_images, len(ds))
    per_block = {b: [] for b in gated}
    was_training = model.training
    model.eval()
    model.set_record(True)
    try:
        with no_grad():
            for start in range(0, n, batch_size):
                xb = ds.images[start:min(start + batch_size, n)].astype(model.dtype, copy=False)
                model(Tensor(xb))
                for b in gated:
                    maps = model.blocks[b].recorded_gates
                    # (N, iterations, C)
                    per_block[b].append(np.stack([g.data.mean(axis=(2, 3)) for g in maps], axis=1))
    finally:
        model.set_record(False)
        model.train(was_training)

    stats = GateStats(images=n)
    for b in gated:
        cfg = model.blocks[b].cfg
        if per_block[b]:
            vals = np.concatenate(per_block[b]).astype(np.float64)
        else:
            vals = np.zeros((0, cfg.iterations - 1, cfg.out_channels))
        if n:
            stats.mean.append(vals.mean(axis=0))
            stats.image_std.append(vals.mean(axis=2).std(axis=0))
            stats.within_block_var.append(vals.var(axis=1).mean(axis=0))
        else:
            stats.mean.append(np.zeros((0, cfg.out_channels)))
            stats.image_std.append(np.zeros(0))
            stats.within_block_var.append(np.zeros(0))
    return stats


def _target_state(model, x: Tensor, locus: Sequence[int]) -> Tensor:
    if isinstance(model, GRCNN):
        block, iteration, channel, y, xx = locus
        if not 0 <= block < len(model.blocks):
            raise DimensionError(f"block {block} outside [0, {len(model.blocks)})")
        if not 0 <= iteration < model.blocks[block].cfg.iterations:
            raise DimensionError(f"iteration {iteration} outside [0, {model.blocks[block].cfg.iterations})")
        h = model.stem(x)
        for i in range(block):
            h = model.blocks[i](h)
            h = model.transitions[i](h)
        blk = model.blocks[block]
        previous = blk.record
        blk.record = True
        try:
            blk(h)
            state = blk.recorded_states[iteration]
        finally:
            blk.record = previous
        return state[0, channel, y, xx]
    channel, y, xx = locus[-3:]
    return model(x)[0, channel, y, xx]


def effective_rf(model: Module, image, locus: Sequence[int], rho: float = 0.01) -> RFProfile:
    """Input-gradient strength map of one neuron.

    ``locus`` is ``(block, iteration, channel, y, x)`` for a GRCNN, or
    ``(channel, y, x)`` of the output of any other module.  Strength is the
    per-pixel maximum over input channels of ``|d activation / d input|``;
    ``effective_size`` counts pixels above ``rho * max(strength)``.  The
    model is evaluated in eval mode so batch statistics do not couple pixels.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim == 3:
        arr = arr[None]
    dtype = getattr(model, "dtype", None) or arr.dtype
    x = Tensor(arr.astype(dtype), requires_grad=True)
    was_training = model.training
    model.eval()
    try:
        target = _target_state(model, x, locus)
        if target.requires_grad:
            target.backward()
    finally:
        model.train(was_training)
    grad = x.grad if x.grad is not None else np.zeros_like(x.data)
    strength = np.abs(grad[0]).max(axis=0).astype(np.float64)
    peak = strength.max()
    if peak == 0:
        warnings.warn("activation gradient is zero everywhere; effective RF is empty", RuntimeWarning)
        return RFProfile(tuple(locus), strength, rho, 0, zero_gradient=True)
    size = int(np.count_nonzero(strength > rho * peak))
    return RFProfile(tuple(locus), strength, rho, size)


def clamp_monotonicity_study(make_model, image, locus, seeds: Sequence[int], levels=(0.0, 0.5, 1.0),
                             rho: float = 0.01):
    """Effective size per clamp level and seed; a seed fails when the size
    decreases as the clamp level increases.  Returns (sizes, failures)."""
    sizes, failures = [], 0
    for seed in seeds:
        model = make_model(seed)
        row = []
        for g in levels:
            model.set_gate_override(g)
            row.append(effective_rf(model, image, locus, rho).effective_size)
        model.set_gate_override(None)
        sizes.append(row)
        failures += any(b < a for a, b in zip(row, row[1:]))
    return np.array(sizes), failures


def _fmt(v) -> str:
    return f"{float(v):.9g}"


def export_csv(obj: Union[GateStats, RFProfile], path, table: str = "mean") -> Path:
    """Write gate statistics (one ``table`` of mean/std/variance) or an RF
    profile as CSV with a header row; floats use 9 significant digits."""
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if isinstance(obj, RFProfile):
                w.writerow(RF_COLUMNS)
                thr = obj.rho * obj.strength.max() if obj.strength.size else 0.0
                for (i, j), s in np.ndenumerate(obj.strength):
                    w.writerow([i, j, _fmt(s), int(s > thr and not obj.zero_gradient)])
            elif table == "mean":
                w.writerow(GATE_MEAN_COLUMNS)
                for b, m in enumerate(obj.mean):
                    for (t, c), v in np.ndenumerate(m):
                        w.writerow([b, t + 1, c, _fmt(v)])
            elif table == "std":
                w.writerow(GATE_STD_COLUMNS)
                for b, s in enumerate(obj.image_std):
                    for t, v in enumerate(s):
                        w.writerow([b, t + 1, _fmt(v)])
            elif table == "variance":
                w.writerow(GATE_VAR_COLUMNS)
                for b, s in enumerate(obj.within_block_var):
                    for c, v in enumerate(s):
                        w.writerow([b, c, _fmt(v)])
            else:
                raise ValueError(f"unknown gate table {table!r}")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc
    return path
