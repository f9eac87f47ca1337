"""Flat binary parameter checkpoints.

Byte layout (all integers little-endian):

    offset  size            field
    0       8               magic ``b"SOPARAMS"``
    8       4               format version, currently 1
    12      4               entry count
    then, for each entry, sorted by name (ascending byte order):
            2               name length in bytes
            name length     parameter path, UTF-8
            1               number of dimensions (ndim)
            4 * ndim        dimension sizes
            8 * prod(dims)  payload, IEEE-754 float64 little-endian, row-major

Values are always serialized as float64 regardless of the in-memory dtype,
so a save/load round trip is bit-exact for float64 parameters and lossless
for float32 ones.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"SOPARAMS"
VERSION = 1


class CheckpointError(RuntimeError):
    """The file is not a valid parameter checkpoint."""


def save_parameters(params: Mapping[str, Tensor], path) -> None:
    path = Path(path)
    chunks: list[bytes] = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        data = np.ascontiguousarray(params[name].data, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    path.write_bytes(b"".join(chunks))


def load_parameters(path) -> dict[str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a parameter checkpoint")
    version, count = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    offset = 16
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(dims)
        offset += 8 * n
        if name in out:
            raise CheckpointError(f"{path}: duplicate parameter path {name!r}")
        out[name] = payload.copy()
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return out


def restore_parameters(params: Mapping[str, Tensor], path) -> None:
    """Load a checkpoint into an existing parameter set, checking shapes."""
    loaded = load_parameters(path)
    missing = sorted(set(params) - set(loaded))
    extra = sorted(set(loaded) - set(params))
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter paths do not match model "
            f"(missing={missing[:5]}, unexpected={extra[:5]})")
    for name, tensor in params.items():
        value = loaded[name]
        if value.shape != tensor.data.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: "
                f"checkpoint {value.shape} vs model {tensor.data.shape}")
        tensor.data = value.astype(tensor.data.dtype, copy=False)
