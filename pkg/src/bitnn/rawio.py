"""Raw tensor dump files used by the CLI.

Both formats are a tiny little-endian header followed by the flat NHWC
payload:

- byte tensor (inputs):  4 x u32 dims (n, h, w, c), then n*h*w*c bytes
- float tensor (outputs): 4 x u32 dims, then n*h*w*c float32 values

No image codecs: convert images with any tool that can emit raw NHWC bytes
(see the converter package README for a one-liner).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ModelFormatError
from .tensors import ByteTensor, FloatTensor, Shape

_DIMS = struct.Struct("<4I")


def write_byte_tensor(path, t: ByteTensor) -> None:
    with open(path, "wb") as f:
        f.write(_DIMS.pack(*t.shape.as_tuple()))
        f.write(np.ascontiguousarray(t.data).tobytes())


def read_byte_tensor(path) -> ByteTensor:
    data = Path(path).read_bytes()
    if len(data) < _DIMS.size:
        raise ModelFormatError(f"{path}: byte tensor file truncated")
    dims = _DIMS.unpack_from(data)
    shape = Shape(*dims)
    payload = data[_DIMS.size:]
    if len(payload) != shape.elements:
        raise ModelFormatError(f"{path}: expected {shape.elements} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()
    return ByteTensor(shape, arr)


def write_float_tensor(path, t: FloatTensor) -> None:
    with open(path, "wb") as f:
        f.write(_DIMS.pack(*t.shape.as_tuple()))
        f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def read_float_tensor(path) -> FloatTensor:
    data = Path(path).read_bytes()
    if len(data) < _DIMS.size:
        raise ModelFormatError(f"{path}: float tensor file truncated")
    dims = _DIMS.unpack_from(data)
    shape = Shape(*dims)
    payload = data[_DIMS.size:]
    if len(payload) != 4 * shape.elements:
        raise ModelFormatError(f"{path}: expected {4 * shape.elements} payload bytes, "
                               f"got {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
    return FloatTensor(shape, arr)
