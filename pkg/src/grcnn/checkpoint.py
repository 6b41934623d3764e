"""Self-describing little-endian binary checkpoints.

Layout::

    b"GRCN"  u32 version  u32 entry_count
    entry*:  u32 name_len  name (UTF-8)  u8 dtype_code  u8 ndim  u64 dims[ndim]  raw values

Entry names are prefixed ``param/``, ``buffer/``, ``optim/`` or ``meta/``.
All values are stored exactly, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import CheckpointError, FormatError

MAGIC = b"GRCN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


def _code(arr: np.ndarray) -> int:
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    for code, d in _DTYPES.items():
        if d == dt:
            return code
    raise FormatError(f"dtype {arr.dtype} cannot be stored in a checkpoint")


def write_entries(path, entries: Dict[str, np.ndarray]) -> None:
    """Serialize ``name -> array`` pairs in insertion order."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, value in entries.items():
        arr = np.asarray(value)
        code = _code(arr)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_entries(path) -> Dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated while reading {what} at byte {pos} "
                              f"(need {n} bytes, file has {len(data) - pos} left)")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: not a GRCN checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2, f"header of {name}"))
        if code not in _DTYPES:
            raise FormatError(f"{path}: entry {name} has unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim, f"dims of {name}"))
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        out[name] = np.frombuffer(take(nbytes, f"values of {name}"), dtype=dt).reshape(dims).copy()
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes after {count} entries")
    return out


def save(model, path, optimizer_state: Optional[dict] = None, meta: Optional[dict] = None) -> None:
    """Write parameters, BN running statistics, optimizer velocities and
    scalar metadata (epoch, step, seed, ...) of ``model`` to ``path``."""
    entries: Dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        entries[f"param/{name}"] = p.data
    for name, arr in model.named_buffers():
        entries[f"buffer/{name}"] = arr
    for name, arr in (optimizer_state or {}).items():
        entries[f"optim/{name}"] = np.asarray(arr)
    for name, value in (meta or {}).items():
        value = np.asarray(value)
        if value.dtype.kind in "iub":
            value = value.astype("<i8")
        elif value.dtype.kind == "f":
            value = value.astype("<f8") if value.dtype != np.float32 else value
        entries[f"meta/{name}"] = value
    write_entries(path, entries)


def restore(model, entries: Dict[str, np.ndarray]) -> None:
    """Copy checkpoint entries into ``model``; shapes must match exactly."""
    for name, p in model.named_parameters():
        key = f"param/{name}"
        if key not in entries:
            raise CheckpointError(f"checkpoint is missing parameter {name}")
        if entries[key].shape != p.shape:
            raise CheckpointError(f"checkpoint-incompatible: parameter {name} has shape "
                                  f"{entries[key].shape} in the file but {p.shape} in the model")
    for name, arr in model.named_buffers():
        key = f"buffer/{name}"
        if key not in entries:
            raise CheckpointError(f"checkpoint is missing buffer {name}")
        if entries[key].shape != arr.shape:
            raise CheckpointError(f"checkpoint-incompatible: buffer {name} has shape "
                                  f"{entries[key].shape} in the file but {arr.shape} in the model")
    expected = {f"param/{n}" for n, _ in model.named_parameters()} | {f"buffer/{n}" for n, _ in model.named_buffers()}
    extra = sorted(k for k in entries if k.split("/", 1)[0] in ("param", "buffer") and k not in expected)
    if extra:
        raise CheckpointError(f"checkpoint-incompatible: unexpected entry {extra[0]}")
    for name, p in model.named_parameters():
        p.data = entries[f"param/{name}"].astype(p.dtype, copy=True)
        p.grad = None
    for name, arr in model.named_buffers():
        arr[...] = entries[f"buffer/{name}"]


def load(path, spec, dtype=None):
    """Build a model for ``spec`` and fill it from the checkpoint at ``path``.

    Returns ``(model, optimizer_state, meta)``.
    """
    from .model import build

    entries = read_entries(path)
    model = build(spec)
    if dtype is not None:
        model.to(dtype)
    else:
        stored = entries.get("param/stem.weight")
        if stored is not None and stored.dtype != model.dtype:
            model.to(stored.dtype)
    restore(model, entries)
    optim = {k[len("optim/"):]: v for k, v in entries.items() if k.startswith("optim/")}
    meta = {k[len("meta/"):]: (v.item() if v.ndim == 0 else v) for k, v in entries.items() if k.startswith("meta/")}
    return model, optim, meta
