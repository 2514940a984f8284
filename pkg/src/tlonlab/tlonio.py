"""TLON tensor container: the on-disk format for datasets, checkpoints
and field dumps.

Layout (all integers little-endian):

    magic   4 bytes  "TLON"
    version u32      1
    count   u32      number of tensors
    per tensor:
        name_len u16, name UTF-8 bytes
        rank     u8
        dims     rank x u64
        data     row-major float64, little-endian

Tensors are written in the order given, so writes are byte-deterministic.
A JSON sidecar at ``<path>.json`` carries free-form metadata; it is
written with sorted keys so reruns produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"TLON"
VERSION = 1


def write_tensors(path, tensors) -> None:
    """Write named float64 tensors; ``tensors`` is a dict or (name, array) pairs."""
    items = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    parts = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, arr in items:
        arr = np.asarray(arr, dtype=np.float64)  # not ascontiguousarray: it promotes 0-d to 1-d
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise FormatError(f"tensor rank too large: {arr.ndim}")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype("<f8", copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path) -> dict[str, np.ndarray]:
    """Read a TLON container back into an ordered name -> array dict."""
    buf = Path(path).read_bytes()
    view = memoryview(buf)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated container at offset {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a TLON container")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        n_elems = 1
        for d in dims:
            n_elems *= d
        data = np.frombuffer(take(8 * n_elems), dtype="<f8").reshape(dims)
        out[name] = data.astype(np.float64)
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes after last tensor")
    return out


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_sidecar(path, metadata: dict) -> None:
    text = json.dumps(metadata, sort_keys=True, indent=2) + "\n"
    sidecar_path(path).write_text(text, encoding="utf-8")


def read_sidecar(path) -> dict:
    return json.loads(sidecar_path(path).read_text(encoding="utf-8"))
