"""SGD training loop with momentum, weight decay and a step schedule."""
from __future__ import annotations

import csv
import hashlib
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from .data import Dataset, augment, iterate_minibatches
from .errors import ConfigError, TrainingError
from .functional import softmax_cross_entropy
from .model import parse_bool
from .nn import Module
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

RUNLOG_COLUMNS = ("epoch", "lr", "train_loss", "test_error", "wall_seconds")


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 300
    lr0: float = 0.1
    lr_milestones: Tuple[float, ...] = (0.5, 0.75)
    lr_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    nesterov: bool = False
    seed: int = 0
    deterministic: bool = True
    max_steps: int = 0
    eval_batch_size: int = 500

    def __post_init__(self):
        self.lr_milestones = tuple(float(m) for m in self.lr_milestones)
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        ms = self.lr_milestones
        if any(not 0.0 < m < 1.0 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"lr_milestones must be strictly increasing in (0, 1), got {ms}")

    @classmethod
    def from_options(cls, options: Dict[str, str]) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(options) - set(kinds))
        if unknown:
            raise ConfigError(f"unknown train keys {unknown}; valid keys: {sorted(kinds)}")
        kw = {}
        try:
            for key, value in options.items():
                if key == "lr_milestones":
                    kw[key] = tuple(float(v) for v in str(value).split(",") if v.strip())
                elif key in ("nesterov", "deterministic"):
                    kw[key] = parse_bool(value)
                elif key in ("batch_size", "epochs", "seed", "max_steps", "eval_batch_size"):
                    kw[key] = int(value)
                else:
                    kw[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"bad train option: {exc}") from exc
        return cls(**kw)


@dataclass
class OptState:
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def as_entries(self) -> Dict[str, np.ndarray]:
        out = {f"velocity/{k}": v for k, v in self.velocity.items()}
        out["step"] = np.asarray(self.step, dtype=np.int64)
        return out

    @classmethod
    def from_entries(cls, entries: Dict[str, np.ndarray]) -> "OptState":
        vel = {k[len("velocity/"):]: v.copy() for k, v in entries.items() if k.startswith("velocity/")}
        return cls(vel, int(entries.get("step", 0)))


def sgd_step(named_params: Sequence[Tuple[str, Tensor]], opt: OptState, lr: float, momentum: float = 0.9,
             weight_decay: float = 0.0, nesterov: bool = False) -> None:
    """One SGD update, in place.

    ``g <- g + wd * w``; ``v <- m * v + g``; then ``w <- w - lr * v`` or, with
    Nesterov, ``w <- w - lr * (g + m * v)``.
    """
    for name, p in named_params:
        if p.grad is None:
            raise TrainingError(f"parameter {name} has no gradient")
    for name, p in named_params:
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.data
        v = opt.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
            opt.velocity[name] = v
        v *= momentum
        v += g
        if nesterov:
            p.data -= lr * (g + momentum * v)
        else:
            p.data -= lr * v
    opt.step += 1


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """``lr0 * factor ** (milestones passed)``; milestone m is passed at
    epoch >= m * epochs."""
    passed = sum(1 for m in cfg.lr_milestones if epoch >= m * cfg.epochs)
    return cfg.lr0 * cfg.lr_factor ** passed


@dataclass
class RunLog:
    rows: List[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        self.rows.append({k: row[k] for k in RUNLOG_COLUMNS})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(RUNLOG_COLUMNS)
            for r in self.rows:
                writer.writerow(self._fields(r) + [f"{r['wall_seconds']:.3f}"])

    @classmethod
    def from_csv(cls, path) -> "RunLog":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != RUNLOG_COLUMNS:
                raise ValueError(f"{path}: expected header {RUNLOG_COLUMNS}")
            rows = [{"epoch": int(r["epoch"]), "lr": float(r["lr"]), "train_loss": float(r["train_loss"]),
                     "test_error": float(r["test_error"]), "wall_seconds": float(r["wall_seconds"])}
                    for r in reader]
        return cls(rows)

    @staticmethod
    def _fields(r: dict) -> List[str]:
        return [str(r["epoch"]), f"{r['lr']:.9g}", f"{r['train_loss']:.9g}", f"{r['test_error']:.9g}"]

    def digest(self) -> str:
        """SHA-256 over the CSV text of every column except wall-clock time."""
        h = hashlib.sha256()
        for r in self.rows:
            h.update((",".join(self._fields(r)) + "\n").encode())
        return h.hexdigest()


def predict(model: Module, images: np.ndarray, batch_size: int = 500) -> np.ndarray:
    """Arg-max class per image; ties go to the lowest class index."""
    was_training = model.training
    model.eval()
    preds = []
    try:
        with no_grad():
            for start in range(0, images.shape[0], batch_size):
                logits = model(Tensor(images[start:start + batch_size].astype(model.dtype, copy=False)))
                preds.append(np.argmax(logits.data, axis=1))
    finally:
        model.train(was_training)
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(model: Module, ds: Dataset, batch_size: int = 500) -> float:
    """Accuracy in eval mode (running BN statistics, no dropout)."""
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(predict(model, ds.images, batch_size) == ds.labels))


def train(model: Module, train_ds: Dataset, test_ds: Optional[Dataset], cfg: TrainConfig,
          out_dir=None, augment_train: bool = False, opt: Optional[OptState] = None) -> RunLog:
    """Epoch loop: shuffle, (augment), forward, loss, backward, SGD step.

    Shuffling and augmentation draw from separate generators seeded by
    ``cfg.seed``.  Appends one RunLog row per epoch, and when ``out_dir``
    is given writes ``runlog.csv`` and ``final.ckpt`` there.
    """
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    augment_rng = np.random.default_rng([cfg.seed, 2])
    if hasattr(model, "dropout"):
        model.dropout.reseed([cfg.seed, 3])
    opt = opt if opt is not None else OptState()
    named = model.named_parameters()
    runlog = RunLog()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    dtype = model.dtype
    start = time.perf_counter()
    stop = False
    epoch = 0
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        model.train()
        order = shuffle_rng.permutation(len(train_ds))
        loss_sum, seen = 0.0, 0
        for batch_idx, (xb, yb) in enumerate(iterate_minibatches(train_ds, cfg.batch_size, order)):
            if augment_train:
                xb = augment(xb, augment_rng)
            logits = model(Tensor(xb.astype(dtype, copy=False)))
            loss = softmax_cross_entropy(logits, yb)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {batch_idx}, lr {lr}")
            model.zero_grad()
            loss.backward()
            sgd_step(named, opt, lr, cfg.momentum, cfg.weight_decay, cfg.nesterov)
            loss_sum += value * len(yb)
            seen += len(yb)
            if cfg.max_steps and opt.step >= cfg.max_steps:
                stop = True
                break
        test_error = float("nan") if test_ds is None else 1.0 - evaluate(model, test_ds, cfg.eval_batch_size)
        runlog.append(epoch=epoch, lr=lr, train_loss=loss_sum / max(seen, 1), test_error=test_error,
                      wall_seconds=time.perf_counter() - start)
        log.info("epoch %d lr %.4g train_loss %.4f test_error %.4f", epoch, lr,
                 runlog.rows[-1]["train_loss"], test_error)
        if out_dir is not None:
            runlog.to_csv(out_dir / "runlog.csv")
        if stop:
            break
    if out_dir is not None:
        meta = {"epoch": epoch, "step": opt.step, "seed": cfg.seed}
        if test_ds is not None:
            meta["test_accuracy"] = 1.0 - runlog.rows[-1]["test_error"]
        checkpoint.save(model, out_dir / "final.ckpt", opt.as_entries(), meta)
    return runlog
