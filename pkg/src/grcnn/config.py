"""Flat ``key = value`` config files with ``[section]`` headers.

Every default decided for this package is exposed as a key, so runs can be
reconfigured without code changes.  Unknown keys are rejected together with
the full list of valid keys.
"""
from __future__ import annotations

from typing import Dict, Iterable, Optional, Set

from .errors import ConfigError

TRAIN_KEYS = {
    "batch_size": "minibatch size",
    "epochs": "training epochs",
    "lr0": "initial learning rate",
    "lr_milestones": "comma list of fractions of total epochs where lr is multiplied by lr_factor",
    "lr_factor": "learning-rate decay factor",
    "momentum": "SGD momentum",
    "weight_decay": "L2 coefficient added to gradients",
    "nesterov": "Nesterov momentum (true/false)",
    "seed": "seed for init, shuffling, augmentation and dropout streams",
    "deterministic": "fixed-order reductions, no wall-clock data in hashes (true/false)",
    "max_steps": "stop after this many optimizer steps (0 = no limit)",
    "eval_batch_size": "batch size for evaluation",
}

DATA_KEYS = {
    "dataset": "mnist | cifar10 | blobs",
    "path": "directory holding the dataset files",
    "augment": "mirror + pad-4 random crop on the training split (true/false)",
    "train_limit": "use only the first N training images (0 = all)",
    "test_limit": "use only the first N test images (0 = all)",
    "blobs_train": "synthetic blobs: training images",
    "blobs_test": "synthetic blobs: test images",
    "blobs_classes": "synthetic blobs: class count",
}

ANALYSIS_KEYS = {
    "max_images": "images used for gate statistics",
    "rho": "effective-RF threshold relative to the strength maximum",
    "block": "RF locus: block index (0-based)",
    "iteration": "RF locus: iteration index",
    "channel": "RF locus: channel",
    "y": "RF locus: row (default: centre)",
    "x": "RF locus: column (default: centre)",
}


def all_keys() -> Dict[str, Dict[str, str]]:
    from .model import MODEL_KEYS
    return {"model": MODEL_KEYS, "train": TRAIN_KEYS, "data": DATA_KEYS, "analysis": ANALYSIS_KEYS}


def _valid_listing(allowed: Dict[str, Iterable[str]]) -> str:
    return "; ".join(f"[{sec}] " + ", ".join(sorted(keys)) for sec, keys in allowed.items())


def parse_config(text: str, allowed: Optional[Dict[str, Set[str]]] = None) -> Dict[str, Dict[str, str]]:
    """Parse config text into ``{section: {key: value}}``."""
    allowed = allowed if allowed is not None else {k: set(v) for k, v in all_keys().items()}
    out: Dict[str, Dict[str, str]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in allowed:
                raise ConfigError(f"line {lineno}: unknown section [{section}]; valid keys: {_valid_listing(allowed)}")
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of a [section]")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed[section]:
            raise ConfigError(f"line {lineno}: unknown key {section}.{key}; valid keys: {_valid_listing(allowed)}")
        out[section][key] = value
    return out


def apply_overrides(sections: Dict[str, Dict[str, str]], overrides: Iterable[str]) -> Dict[str, Dict[str, str]]:
    """Apply ``section.key=value`` (or unambiguous ``key=value``) overrides."""
    allowed = all_keys()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
        else:
            owners = [sec for sec, keys in allowed.items() if key in keys]
            if len(owners) != 1:
                raise ConfigError(f"unknown or ambiguous key {key!r}; valid keys: {_valid_listing(allowed)}")
            section, name = owners[0], key
        if section not in allowed or name not in allowed[section]:
            raise ConfigError(f"unknown key {key!r}; valid keys: {_valid_listing(allowed)}")
        sections.setdefault(section, {})[name] = value
    return sections


def load_config(path) -> Dict[str, Dict[str, str]]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
