"""Binary checkpoint format for named tensors.

Layout: magic ``TNCK``, format version (u32), then one record per tensor:
name length (u32) + UTF-8 name, rank (u32), extents (u64 each), raw
little-endian float64 payload in row-major order.  Records run to EOF.
Adam moments are stored as additional records named ``<param>-m`` and
``<param>-v``; the shared step counter as a scalar named ``adam-step``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .adam import AdamState
from .tensor import Tensor

MAGIC = b"TNCK"
VERSION = 1


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    for extent in arr.shape:
        fh.write(struct.pack("<Q", extent))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in arrays.items():
            _write_record(fh, name, np.asarray(arr, dtype=np.float64))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 8
    out: dict[str, np.ndarray] = {}
    total = len(raw)
    while offset < total:
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}Q", raw, offset) if rank else ()
        offset += 8 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        out[name] = arr.reshape(shape).astype(np.float64)
    if offset != total:
        raise FormatError(f"{path}: trailing bytes after last record")
    return out


def save_checkpoint(path: str | Path, params: dict[str, Tensor],
                    adam: AdamState | None = None) -> None:
    arrays: dict[str, np.ndarray] = {k: v.data for k, v in params.items()}
    if adam is not None:
        for name, tensor in params.items():
            m, v = adam.slots_for(tensor)
            arrays[f"{name}-m"] = m
            arrays[f"{name}-v"] = v
        arrays["adam-step"] = np.asarray(float(adam.step_count))
    save_arrays(path, arrays)


def load_checkpoint(path: str | Path, params: dict[str, Tensor],
                    adam: AdamState | None = None) -> None:
    """Restore parameter values (and Adam state when present) in place."""
    arrays = load_arrays(path)
    for name, tensor in params.items():
        if name not in arrays:
            raise FormatError(f"{path}: checkpoint is missing parameter {name!r}")
        arr = arrays[name]
        if arr.shape != tensor.data.shape:
            raise FormatError(
                f"{path}: parameter {name!r} has shape {arr.shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = arr.copy()
    if adam is not None and "adam-step" in arrays:
        adam.step_count = int(arrays["adam-step"])
        for name, tensor in params.items():
            m = arrays.get(f"{name}-m")
            v = arrays.get(f"{name}-v")
            if m is not None and v is not None:
                adam.load_slots(tensor, m.copy(), v.copy())
