"""Tensor containers and channel bit-packing.

All tensors use NHWC layout with the channel axis minor. Binary tensors pack
the channel dimension into machine words:

- bit value 1 encodes +1, bit value 0 encodes -1;
- within a word, bit k (k = 0 at the least-significant bit) holds channel
  index ``group_base + k``;
- every pixel occupies ``ceil(c / lane_bits)`` words and the padding bits
  past channel c-1 in the last word are always zero, so xor over padding
  contributes nothing to a popcount.

The flat index of word k of pixel (n, h, w) is
``((n*H + h)*W + w) * words_per_pixel + k``.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidValueError

if sys.byteorder != "little":
    raise ImportError("bitnn packs words via little-endian byte views; "
                      "big-endian hosts are not supported")

LANE_DTYPES = {8: np.uint8, 16: np.uint16, 32: np.uint32, 64: np.uint64}
DEFAULT_LANE_BITS = 64


@dataclass(frozen=True)
class Shape:
    """NHWC tensor dimensions, all strictly positive."""

    n: int
    h: int
    w: int
    c: int

    def __post_init__(self):
        for name in ("n", "h", "w", "c"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise DimensionError(f"shape dimension {name}={v!r} must be a positive integer")

    @property
    def elements(self) -> int:
        return self.n * self.h * self.w * self.c

    @property
    def pixels(self) -> int:
        return self.n * self.h * self.w

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.n, self.h, self.w, self.c)


def words_per_pixel(c: int, lane_bits: int) -> int:
    return -(-c // lane_bits)


def padding_mask(c: int, lane_bits: int) -> int:
    """Bit mask of the unused (padding) bits in the last word of a pixel."""
    used = c - (words_per_pixel(c, lane_bits) - 1) * lane_bits
    full = (1 << lane_bits) - 1
    return full ^ ((1 << used) - 1)


class BitTensor:
    """Channel-bit-packed NHWC tensor.

    ``data`` has shape (n, h, w, words_per_pixel) and one of the unsigned
    lane dtypes. The same container is used both for sign-encoded tensors
    (bit 1 = +1, bit 0 = -1) and for raw bit planes.
    """

    __slots__ = ("shape", "lane_bits", "data")

    def __init__(self, shape: Shape, lane_bits: int, data: np.ndarray):
        if lane_bits not in LANE_DTYPES:
            raise InvalidValueError(f"lane_bits must be one of {sorted(LANE_DTYPES)}, got {lane_bits}")
        wpp = words_per_pixel(shape.c, lane_bits)
        expected = (shape.n, shape.h, shape.w, wpp)
        if data.shape != expected:
            raise DimensionError(f"packed data shape {data.shape} != expected {expected}")
        if data.dtype != LANE_DTYPES[lane_bits]:
            raise InvalidValueError(f"packed data dtype {data.dtype} does not match lane_bits={lane_bits}")
        pad = padding_mask(shape.c, lane_bits)
        if pad and np.any(data[..., -1] & LANE_DTYPES[lane_bits](pad)):
            raise InvalidValueError("padding bits past the last channel must be zero")
        self.shape = shape
        self.lane_bits = lane_bits
        self.data = data

    @property
    def words_per_pixel(self) -> int:
        return self.data.shape[-1]

    def __eq__(self, other) -> bool:
        return (isinstance(other, BitTensor)
                and self.shape == other.shape
                and self.lane_bits == other.lane_bits
                and np.array_equal(self.data, other.data))

    def __repr__(self) -> str:
        return f"BitTensor(shape={self.shape}, lane_bits={self.lane_bits})"


@dataclass(frozen=True)
class ByteTensor:
    """Unsigned 8-bit NHWC tensor (network inputs, e.g. images)."""

    shape: Shape
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != self.shape.as_tuple():
            raise DimensionError(f"data shape {self.data.shape} != {self.shape.as_tuple()}")
        if self.data.dtype != np.uint8:
            raise InvalidValueError(f"ByteTensor requires uint8 data, got {self.data.dtype}")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ByteTensor":
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        if arr.ndim != 4:
            raise DimensionError(f"expected a 4-d NHWC array, got ndim={arr.ndim}")
        return cls(Shape(*arr.shape), arr)


@dataclass(frozen=True)
class FloatTensor:
    """Real-valued NHWC tensor (full-precision network outputs)."""

    shape: Shape
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != self.shape.as_tuple():
            raise DimensionError(f"data shape {self.data.shape} != {self.shape.as_tuple()}")
        if not np.issubdtype(self.data.dtype, np.floating):
            raise InvalidValueError(f"FloatTensor requires float data, got {self.data.dtype}")
        if not np.isfinite(self.data).all():
            raise InvalidValueError("FloatTensor entries must be finite")


def pack_bit_array(bits: np.ndarray, lane_bits: int = DEFAULT_LANE_BITS) -> np.ndarray:
    """Pack a (..., c) array of {0,1} values into (..., words_per_pixel) words.

    LSB-first within each word; padding bits are zero.
    """
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    c = bits.shape[-1]
    wpp = words_per_pixel(c, lane_bits)
    total_bits = wpp * lane_bits
    if total_bits != c:
        padded = np.zeros(bits.shape[:-1] + (total_bits,), dtype=np.uint8)
        padded[..., :c] = bits
        bits = padded
    packed_bytes = np.packbits(bits, axis=-1, bitorder="little")
    words = packed_bytes.view(LANE_DTYPES[lane_bits])
    return words.reshape(bits.shape[:-1] + (wpp,))


def unpack_bit_array(words: np.ndarray, c: int) -> np.ndarray:
    """Inverse of :func:`pack_bit_array`; returns a (..., c) array of {0,1}."""
    words = np.ascontiguousarray(words)
    packed_bytes = words.view(np.uint8).reshape(words.shape[:-1] + (-1,))
    bits = np.unpackbits(packed_bytes, axis=-1, bitorder="little")
    return bits[..., :c]


def pack_channels(src: np.ndarray, lane_bits: int = DEFAULT_LANE_BITS) -> BitTensor:
    """Pack an NHWC sign tensor (values exactly -1 or +1) along channels.

    Channel k of a pixel lands on bit k (mod lane_bits) of word k // lane_bits,
    with +1 encoded as a set bit.
    """
    src = np.asarray(src)
    if src.ndim != 4:
        raise DimensionError(f"expected a 4-d NHWC array, got ndim={src.ndim}")
    values_ok = np.abs(src) == 1
    if not values_ok.all():
        bad = np.argwhere(~values_ok)[0]
        raise InvalidValueError(
            f"sign tensor must contain only -1/+1; found {src[tuple(bad)]!r} at index {tuple(bad)}")
    bits = (src > 0).astype(np.uint8)
    words = pack_bit_array(bits, lane_bits)
    return BitTensor(Shape(*src.shape), lane_bits, words)


def unpack_channels(t: BitTensor) -> np.ndarray:
    """Unpack a sign-encoded BitTensor back to an int8 NHWC array of -1/+1."""
    bits = unpack_bit_array(t.data, t.shape.c)
    return (bits.astype(np.int8) << 1) - 1


def split_bitplanes(img: ByteTensor, lane_bits: int = DEFAULT_LANE_BITS) -> list[BitTensor]:
    """Split an 8-bit tensor into its 8 channel-packed bit planes.

    Plane i (0-based) holds bit i of every byte, so
    ``sum(2**i * plane_i)`` reconstructs the original tensor exactly. Plane
    bits are raw {0,1} values, not the -1/+1 sign encoding.
    """
    planes = []
    for i in range(8):
        bits = (img.data >> i) & 1
        words = pack_bit_array(bits, lane_bits)
        planes.append(BitTensor(img.shape, lane_bits, words))
    return planes
