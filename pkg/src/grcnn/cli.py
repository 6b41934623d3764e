"""Command-line entry point: ``python -m grcnn <command> [flags]``.

Commands: train, eval, gradcheck, verify, gates, rf, export-spec.
Exit codes: 0 success, 1 runtime failure (or a failed check), 2 bad
configuration or incompatible checkpoint.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import analysis, checkpoint
from . import functional as F
from .config import apply_overrides, load_config
from .data import Dataset, load_cifar10, load_mnist, normalize, synthetic_blobs
from .errors import CheckpointError, ConfigError, FormatError
from .model import GRCNN, build, param_count, parse_bool, spec_from_options, spec_to_text
from .trainer import TrainConfig, evaluate, train
from .verification import GRAD_TOLERANCE, gradient_suite, oracle_suite

COMMANDS = ("train", "eval", "gradcheck", "verify", "gates", "rf", "export-spec")
log = logging.getLogger("grcnn")


def _sections(args) -> Dict[str, Dict[str, str]]:
    sections = load_config(args.config) if args.config else {}
    sections = apply_overrides(sections, args.override or [])
    if args.seed is not None:
        sections.setdefault("train", {})["seed"] = str(args.seed)
    if args.deterministic:
        sections.setdefault("train", {})["deterministic"] = "true"
    return sections


def load_data(opts: Dict[str, str], seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Train and test splits per the ``[data]`` section, normalized with the
    training-split statistics."""
    kind = opts.get("dataset", "blobs")
    if kind == "blobs":
        classes = int(opts.get("blobs_classes", 10))
        train_ds = synthetic_blobs(int(opts.get("blobs_train", 2000)), classes, seed=1000 + seed)
        test_ds = synthetic_blobs(int(opts.get("blobs_test", 500)), classes, seed=2000 + seed)
        test_ds.split = "test"
    elif kind in ("mnist", "cifar10"):
        if "path" not in opts:
            raise ConfigError(f"dataset {kind} needs data.path")
        loader = load_mnist if kind == "mnist" else load_cifar10
        train_ds, test_ds = loader(opts["path"])
    else:
        raise ConfigError(f"data.dataset must be mnist, cifar10 or blobs, got {kind!r}")
    train_ds = train_ds.subset(int(opts.get("train_limit", 0)))
    test_ds = test_ds.subset(int(opts.get("test_limit", 0)))
    train_ds = normalize(train_ds)
    test_ds = normalize(test_ds, train_ds.channel_mean, train_ds.channel_std)
    return train_ds, test_ds


def _model(sections, seed: int, checkpoint_path: Optional[str]) -> GRCNN:
    spec = spec_from_options(sections.get("model", {}))
    if checkpoint_path:
        model, _, _ = checkpoint.load(checkpoint_path, spec)
        return model
    return build(spec, seed=seed)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -------------------------------------------------------------------------
def cmd_train(args) -> int:
    sections = _sections(args)
    cfg = TrainConfig.from_options(sections.get("train", {}))
    data = sections.get("data", {})
    spec = spec_from_options(sections.get("model", {}))
    train_ds, test_ds = load_data(data, cfg.seed)
    model = build(spec, seed=cfg.seed)
    out = _out_dir(args)
    (out / "model.cfg").write_text(spec_to_text(spec), encoding="utf-8")
    print(f"parameters {param_count(model)}")
    runlog = train(model, train_ds, test_ds, cfg, out_dir=out, augment_train=parse_bool(data.get("augment", "false")))
    last = runlog.rows[-1]
    print(f"final train_loss {last['train_loss']:.6f} test_error {last['test_error']:.4f} "
          f"wall {last['wall_seconds']:.1f}s")
    print(f"runlog sha256 {runlog.digest()}")
    return 0


def cmd_eval(args) -> int:
    sections = _sections(args)
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    model = _model(sections, 0, args.checkpoint)
    _, test_ds = load_data(sections.get("data", {}), int(sections.get("train", {}).get("seed", 0)))
    acc = evaluate(model, test_ds)
    print(f"accuracy {acc:.4f} on {len(test_ds)} test images")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradient_suite(instances=args.instances, seed=args.seed or 0)
    failed = 0
    for name, err in results:
        ok = err < GRAD_TOLERANCE
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: max rel err {err:.3e}")
    print(f"{len(results) - failed}/{len(results)} within {GRAD_TOLERANCE:g}")
    return 1 if failed else 0


def cmd_verify(args) -> int:
    results = oracle_suite()
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_gates(args) -> int:
    sections = _sections(args)
    seed = int(sections.get("train", {}).get("seed", 0))
    model = _model(sections, seed, args.checkpoint)
    _, test_ds = load_data(sections.get("data", {}), seed)
    max_images = int(sections.get("analysis", {}).get("max_images", 1000))
    stats = analysis.collect_gate_stats(model, test_ds, max_images)
    out = _out_dir(args)
    for table in ("mean", "std", "variance"):
        path = analysis.export_csv(stats, out / f"gates_{table}.csv", table)
        print(f"wrote {path}")
    return 0


def cmd_rf(args) -> int:
    sections = _sections(args)
    seed = int(sections.get("train", {}).get("seed", 0))
    model = _model(sections, seed, args.checkpoint)
    opts = sections.get("analysis", {})
    _, test_ds = load_data(sections.get("data", {}), seed)
    block = int(opts.get("block", 0))
    cfg = model.spec.blocks[block]
    iteration = int(opts.get("iteration", cfg.iterations - 1))
    # feature-map size at the chosen block
    spec = model.spec
    h = F.conv_output_size(spec.input_shape[1], spec.stem_kernel, spec.stem_stride, spec.stem_kernel // 2)
    h //= 2 ** block
    y, x = int(opts.get("y", h // 2)), int(opts.get("x", h // 2))
    profile = analysis.effective_rf(model, test_ds.images[:1], (block, iteration, int(opts.get("channel", 0)), y, x),
                                    float(opts.get("rho", 0.01)))
    path = analysis.export_csv(profile, _out_dir(args) / "rf.csv")
    print(f"effective size {profile.effective_size} pixels (rho {profile.rho:g}); wrote {path}")
    return 0


def cmd_export_spec(args) -> int:
    sections = _sections(args)
    spec = spec_from_options(sections.get("model", {}))
    text = spec_to_text(spec)
    path = _out_dir(args) / "model.cfg"
    path.write_text(text, encoding="utf-8")
    model = build(spec)
    print(text, end="")
    print(f"# parameters {param_count(model)}; wrote {path}")
    return 0


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "verify": cmd_verify,
            "gates": cmd_gates, "rf": cmd_rf, "export-spec": cmd_export_spec}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grcnn", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="config file with [model] [train] [data] [analysis] sections")
    p.add_argument("--seed", type=int, help="overrides train.seed")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="section.key=value or unambiguous key=value; repeatable")
    p.add_argument("--deterministic", action="store_true", help="force train.deterministic=true")
    p.add_argument("--checkpoint", help="checkpoint to load (eval, gates, rf)")
    p.add_argument("--instances", type=int, default=3, help="random instances per gradcheck case")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv: Optional[List[str]] = None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return HANDLERS[args.command](args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
