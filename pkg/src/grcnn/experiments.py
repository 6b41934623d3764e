"""Small, seeded comparisons between block variants at a matched parameter
budget on the synthetic blob task."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .data import normalize, synthetic_blobs
from .model import ModelSpec, build, param_count, spec_from_options
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

TREND_VARIANTS = ("grcl_improved", "grcl_original", "rcl")


def trend_spec(variant: str, width: int, iterations: int = 3, stem: int = 16) -> ModelSpec:
    """Two tied blocks of ``width`` maps on 32x32 RGB input, ungrouped convs."""
    return spec_from_options({
        "input_shape": "3,32,32", "stem_channels": str(stem), "variant": variant,
        "iterations": f"{iterations},{iterations}", "channels": f"{width},{width}",
        "groups_feedforward": "1", "groups_gate": "1", "tie_recurrent": "true", "tie_gate": "true",
        "dropout": "0", "num_classes": "10",
    })


def matched_width(variant: str, budget: int, iterations: int = 3, step: int = 2, limit: int = 256) -> int:
    """Width whose parameter count is closest to ``budget``."""
    best, best_gap = step, None
    for width in range(step, limit + 1, step):
        gap = abs(param_count(build(trend_spec(variant, width, iterations))) - budget)
        if best_gap is None or gap < best_gap:
            best, best_gap = width, gap
    return best


@dataclass
class TrendResult:
    widths: Dict[str, int]
    params: Dict[str, int]
    losses: Dict[str, List[float]] = field(default_factory=dict)

    def median(self, variant: str) -> float:
        return float(np.median(self.losses[variant]))

    def ordered(self) -> bool:
        """Median final train loss: improved <= original <= rcl."""
        m = [self.median(v) for v in TREND_VARIANTS]
        return m[0] <= m[1] <= m[2]


def trend_experiment(seeds: Sequence[int] = (0, 1, 2), iterations: int = 3, base_width: int = 24,
                     n_train: int = 1000, epochs: int = 20, batch_size: int = 50, lr0: float = 0.05,
                     variants: Sequence[str] = TREND_VARIANTS) -> TrendResult:
    """Train each variant once per seed and record the final epoch's mean
    training loss.  Widths are matched to the grcl_improved budget at
    ``base_width``."""
    budget = param_count(build(trend_spec("grcl_improved", base_width, iterations)))
    widths = {v: base_width if v == "grcl_improved" else matched_width(v, budget, iterations) for v in variants}
    params = {v: param_count(build(trend_spec(v, w, iterations))) for v, w in widths.items()}
    result = TrendResult(widths, params, {v: [] for v in variants})
    for seed in seeds:
        ds = normalize(synthetic_blobs(n_train, 10, seed=seed))
        for v in variants:
            model = build(trend_spec(v, widths[v], iterations), seed=seed)
            cfg = TrainConfig(batch_size=batch_size, epochs=epochs, lr0=lr0, seed=seed)
            runlog = train(model, ds, None, cfg)
            loss = runlog.rows[-1]["train_loss"]
            result.losses[v].append(loss)
            log.info("seed %d %s width %d params %d final loss %.5f", seed, v, widths[v], params[v], loss)
    return result
