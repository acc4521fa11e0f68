"""Word-parallel binary arithmetic primitives.

The core identity: for two sign vectors packed LSB-first into words, the
+-1 dot product equals ``len - 2 * popcount(a xor b)``. The first-layer
variant works on raw {0,1} bit planes against sign weights and uses
``2 * popcount(plane and w) - popcount(plane)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidValueError
from .tensors import LANE_DTYPES

_NIBBLE_TABLE = np.array([bin(i).count("1") for i in range(16)], dtype=np.uint8)

HAS_NATIVE_POPCOUNT = hasattr(np, "bitwise_count")


def popcount_words_nibble(words: np.ndarray) -> np.ndarray:
    """Portable per-word popcount via a 4-bit lookup table."""
    words = np.ascontiguousarray(words)
    nib = words.view(np.uint8)
    counts = _NIBBLE_TABLE[nib & 0x0F] + _NIBBLE_TABLE[nib >> 4]
    itemsize = words.dtype.itemsize
    if itemsize == 1:
        return counts.reshape(words.shape)
    return counts.reshape(words.shape + (itemsize,)).sum(axis=-1, dtype=np.uint8)


if HAS_NATIVE_POPCOUNT:
    def popcount_words(words: np.ndarray) -> np.ndarray:
        """Per-word popcount using the platform popcount instruction."""
        return np.bitwise_count(words)
else:  # pragma: no cover - exercised only on old numpy
    popcount_words = popcount_words_nibble


def span_popcount(words: np.ndarray) -> int:
    """Total number of set bits across a word span."""
    if words.size == 0:
        return 0
    return int(popcount_words(words).sum(dtype=np.int64))


@dataclass(frozen=True)
class PackedVectorView:
    """A read-only view of a packed bit vector: word span plus valid length.

    Bits at positions >= nbits must be zero so that popcount-based formulas
    are exact without masking.
    """

    words: np.ndarray
    nbits: int

    def __post_init__(self):
        if self.words.ndim != 1:
            raise DimensionError("PackedVectorView expects a 1-d word span")
        lane = self.lane_bits
        if lane not in LANE_DTYPES or self.words.dtype != LANE_DTYPES[lane]:
            raise InvalidValueError(f"unsupported word dtype {self.words.dtype}")
        capacity = self.words.size * lane
        if not 0 <= self.nbits <= capacity:
            raise DimensionError(f"nbits={self.nbits} exceeds span capacity {capacity}")
        # Trailing-zero invariant: whole words past the end, then the
        # partial word's padding bits.
        full_words = self.nbits // lane
        rem = self.nbits % lane
        tail_start = full_words + (1 if rem else 0)
        if np.any(self.words[tail_start:]):
            raise InvalidValueError("bits beyond nbits must be zero")
        if rem:
            pad = ((1 << lane) - 1) ^ ((1 << rem) - 1)
            if self.words[full_words] & LANE_DTYPES[lane](pad):
                raise InvalidValueError("bits beyond nbits must be zero")

    @property
    def lane_bits(self) -> int:
        return self.words.dtype.itemsize * 8


def _check_pair(a: PackedVectorView, b: PackedVectorView) -> None:
    if a.nbits != b.nbits:
        raise DimensionError(f"vector lengths differ: {a.nbits} != {b.nbits}")
    if a.words.dtype != b.words.dtype:
        raise DimensionError(f"lane widths differ: {a.words.dtype} != {b.words.dtype}")


def binary_dot(a: PackedVectorView, b: PackedVectorView) -> int:
    """+-1 dot product of two packed sign vectors.

    Returns ``nbits - 2 * popcount(a xor b)``; the result lies in
    [-nbits, +nbits] and has the same parity as nbits.
    """
    _check_pair(a, b)
    return a.nbits - 2 * span_popcount(np.bitwise_xor(a.words, b.words))


def plane_dot(plane: PackedVectorView, w: PackedVectorView) -> int:
    """Dot product of a raw {0,1} bit plane with packed sign weights.

    Equals the sum of w_i over positions where the plane bit is 1, computed
    as ``2 * popcount(plane and w) - popcount(plane)``.
    """
    _check_pair(plane, w)
    both = span_popcount(np.bitwise_and(plane.words, w.words))
    return 2 * both - span_popcount(plane.words)
