"""Network layer kernels over channel-bit-packed tensors.

The hot path is the fused binary convolution: one pass computes the packed
+-1 convolution with xor/popcount, compares the integer accumulator against
a per-channel precomputed threshold, and emits the packed binary output.
The branch-free binarization rule is ``(A xor B) or C`` with
A = acc < threshold, B = bn scale positive, C = acc == threshold.

Spatial zero padding treats a padded cell as numeric 0: it is excluded from
the window's valid length rather than contributing a fake -1. Padded input
words are zero, so xor against them counts exactly the weight bits of that
cell; a precomputed per-window correction removes those counts again.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidParameterError, InvalidValueError
from .kernels import popcount_words
from .tensors import (
    LANE_DTYPES,
    BitTensor,
    ByteTensor,
    FloatTensor,
    Shape,
    pack_bit_array,
    unpack_bit_array,
    words_per_pixel,
)

# Paper-faithful defaults: 8 binary outputs are binarized and packed into one
# byte per task; packing stays integrated while the input channel count is
# no greater than this threshold.
INTEGRATED_GROUP = 8
DEFAULT_INTEGRATE_THRESHOLD = 256
_SEPARATE_BLOCK = 64


@dataclass(frozen=True)
class ConvGeometry:
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise DimensionError("kernel dims must be >= 1")
        if self.stride_h < 1 or self.stride_w < 1:
            raise DimensionError("strides must be >= 1")
        if self.pad_h < 0 or self.pad_w < 0:
            raise DimensionError("padding must be >= 0")
        if self.in_channels < 1 or self.out_channels < 1:
            raise DimensionError("channel counts must be >= 1")

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.pad_h - self.kernel_h) // self.stride_h + 1
        ow = (w + 2 * self.pad_w - self.kernel_w) // self.stride_w + 1
        if oh < 1 or ow < 1:
            raise DimensionError(f"window {self.kernel_h}x{self.kernel_w} does not fit {h}x{w} input")
        return oh, ow

    @property
    def window_len(self) -> int:
        return self.kernel_h * self.kernel_w * self.in_channels


@dataclass(frozen=True)
class PoolGeometry:
    window_h: int
    window_w: int
    stride_h: int
    stride_w: int

    def __post_init__(self):
        if min(self.window_h, self.window_w, self.stride_h, self.stride_w) < 1:
            raise DimensionError("pool window and stride must be >= 1")

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        # Windows start at every stride step; cells past the edge are ignored.
        return -(-h // self.stride_h), -(-w // self.stride_w)


@dataclass(frozen=True)
class LayerParams:
    """Raw per-output-channel parameters kept for serialization and the oracle."""

    bias: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        n = self.bias.shape[0]
        for name in ("gamma", "beta", "mean", "std"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise DimensionError(f"parameter {name} has shape {arr.shape}, expected ({n},)")
            if arr.dtype != np.float32:
                raise InvalidValueError(f"parameter {name} must be float32")
        if self.bias.dtype != np.float32:
            raise InvalidValueError("bias must be float32")


def _check_threshold(threshold: np.ndarray, out_channels: int) -> None:
    if threshold.shape != (out_channels,):
        raise DimensionError(f"threshold shape {threshold.shape} != ({out_channels},)")
    if not np.isfinite(threshold).all():
        raise InvalidParameterError("thresholds must be finite")


@dataclass
class FusedConvLayer:
    """Binary conv with bias, batch norm, and binarization folded into a
    per-channel threshold and a scale-sign flag."""

    geometry: ConvGeometry
    weights: BitTensor
    threshold: np.ndarray            # float64 per output channel
    gamma_positive: np.ndarray       # bool per output channel
    params: LayerParams
    pack_integrated: bool = True

    def __post_init__(self):
        g = self.geometry
        expected = Shape(g.out_channels, g.kernel_h, g.kernel_w, g.in_channels)
        if self.weights.shape != expected:
            raise DimensionError(f"weight shape {self.weights.shape} != {expected}")
        _check_threshold(self.threshold, g.out_channels)
        if self.gamma_positive.shape != (g.out_channels,):
            raise DimensionError("gamma_positive length mismatch")


@dataclass
class FirstConvLayer:
    """Bit-plane convolution over an 8-bit input, then the fused binarize."""

    geometry: ConvGeometry
    weights: BitTensor
    threshold: np.ndarray
    gamma_positive: np.ndarray
    params: LayerParams

    def __post_init__(self):
        g = self.geometry
        expected = Shape(g.out_channels, g.kernel_h, g.kernel_w, g.in_channels)
        if self.weights.shape != expected:
            raise DimensionError(f"weight shape {self.weights.shape} != {expected}")
        _check_threshold(self.threshold, g.out_channels)


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(self.std <= 0):
            raise InvalidParameterError("batch-norm std must be strictly positive")


@dataclass
class OutputConvLayer:
    """Full-precision output layer: binary weights, real accumulation result."""

    geometry: ConvGeometry
    weights: BitTensor
    bias: np.ndarray
    bn: BatchNormParams | None = None

    def __post_init__(self):
        g = self.geometry
        expected = Shape(g.out_channels, g.kernel_h, g.kernel_w, g.in_channels)
        if self.weights.shape != expected:
            raise DimensionError(f"weight shape {self.weights.shape} != {expected}")
        if self.bias.shape != (g.out_channels,):
            raise DimensionError("bias length mismatch")


@dataclass(frozen=True)
class ConvPlan:
    """Workload plan for one fused conv layer."""

    pack_integrated: bool
    group_channels: int = INTEGRATED_GROUP


def schedule_conv(layer: FusedConvLayer,
                  integrate_threshold: int = DEFAULT_INTEGRATE_THRESHOLD) -> ConvPlan:
    """Pick the packing strategy for a fused conv layer.

    Small input channel counts keep an output task's data small enough to
    binarize 8 channels and pack their byte in-register; beyond the
    threshold the binarized bytes are written per channel and packed in a
    separate pass. Both plans produce identical output words.
    """
    return ConvPlan(pack_integrated=layer.geometry.in_channels <= integrate_threshold)


def threshold_sign_bits(acc, threshold, gamma_positive):
    """Branchless binarization of an integer accumulator: (A xor B) or C."""
    below = acc < threshold
    tie = acc == threshold
    return np.logical_xor(below, gamma_positive) | tie


# ---------------------------------------------------------------------------
# conv engine internals


def _im2col_words(words: np.ndarray, kh: int, kw: int, sh: int, sw: int,
                  ph: int, pw: int) -> np.ndarray:
    """Gather receptive-field words for every output position.

    ``words`` is one batch item, shape (h, w, wpp). Returns (P, K) with
    P = oh*ow and K = kh*kw*wpp; padded border cells appear as zero words.
    """
    h, w, wpp = words.shape
    if ph or pw:
        padded = np.zeros((h + 2 * ph, w + 2 * pw, wpp), dtype=words.dtype)
        padded[ph:ph + h, pw:pw + w] = words
    else:
        padded = words
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
    win = win[::sh, ::sw]                                  # (oh, ow, wpp, kh, kw)
    col = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2))
    oh, ow = col.shape[0], col.shape[1]
    return col.reshape(oh * ow, kh * kw * wpp)


@dataclass(frozen=True)
class _BorderFix:
    """Accumulator correction for zero-padded border windows.

    Interior windows satisfy acc = window_len - 2 * xor_popcount directly.
    A border window excludes its padded cells from the length and must
    cancel the weight bits that xor against zero input words counted, so
    acc there additionally gains delta[row]. ``rows`` are sorted flat
    window indices; both arrays are empty for unpadded geometry.
    """

    interior: int
    rows: np.ndarray            # (nb,) int64, sorted
    delta: np.ndarray           # (nb, out_channels) int64

    def apply(self, acc: np.ndarray, r0: int, c0: int, c1: int) -> None:
        lo, hi = np.searchsorted(self.rows, (r0, r0 + acc.shape[0]))
        if lo != hi:
            acc[self.rows[lo:hi] - r0] += self.delta[lo:hi, c0:c1]


def _window_base(geo: ConvGeometry, h: int, w: int, weights: BitTensor) -> _BorderFix:
    """Precompute the zero-padding correction table for one layer call."""
    if geo.pad_h == 0 and geo.pad_w == 0:
        return _BorderFix(geo.window_len, np.empty(0, np.int64),
                          np.empty((0, geo.out_channels), np.int64))
    oh, ow = geo.out_size(h, w)
    hs = np.arange(oh) * geo.stride_h - geo.pad_h
    ws = np.arange(ow) * geo.stride_w - geo.pad_w
    row_ok = ((hs[:, None] + np.arange(geo.kernel_h)[None, :] >= 0)
              & (hs[:, None] + np.arange(geo.kernel_h)[None, :] < h))
    col_ok = ((ws[:, None] + np.arange(geo.kernel_w)[None, :] >= 0)
              & (ws[:, None] + np.arange(geo.kernel_w)[None, :] < w))
    bi, bj = np.nonzero(~(row_ok.all(axis=1)[:, None] & col_ok.all(axis=1)[None, :]))
    if bi.size == 0:
        return _BorderFix(geo.window_len, np.empty(0, np.int64),
                          np.empty((0, geo.out_channels), np.int64))
    cell_ok = (row_ok[bi][:, :, None] & col_ok[bj][:, None, :]).reshape(bi.size, -1)
    cell_ok = cell_ok.astype(np.float32)
    valid_cells = cell_ok.sum(axis=1)
    # per-cell weight popcounts; float32 matmul is exact for these magnitudes
    cell_pc = popcount_words(weights.data).sum(axis=3, dtype=np.int64)
    cell_pc = cell_pc.reshape(geo.out_channels, -1).astype(np.float32)
    pad_corr = (1.0 - cell_ok) @ cell_pc.T
    base = geo.in_channels * valid_cells[:, None] + 2.0 * pad_corr
    delta = base.astype(np.int64) - geo.window_len
    rows = (bi * ow + bj).astype(np.int64)
    return _BorderFix(geo.window_len, rows, delta)


def _for_rows(total: int, threads: int, fn) -> None:
    """Run fn(r0, r1) over a row partition, optionally on a thread pool.

    Chunks are fixed by ``total`` alone, so results do not depend on the
    pool size; each chunk writes a disjoint output slice.
    """
    if threads <= 1 or total < 2:
        fn(0, total)
        return
    n = min(threads, total)
    bounds = [(i * total // n, (i + 1) * total // n) for i in range(n)]
    with ThreadPoolExecutor(max_workers=n) as ex:
        futures = [ex.submit(fn, r0, r1) for r0, r1 in bounds]
        for f in futures:
            f.result()


def _conv_words_integrated(col, wmat, border, threshold, gamma_positive,
                           out_c, lane_bits, threads):
    """Integrated plan: binarize 8 output channels and pack their byte in one go."""
    P, K = col.shape
    wpp_out = words_per_pixel(out_c, lane_bits)
    nbytes = wpp_out * (lane_bits // 8)
    out_bytes = np.zeros((P, nbytes), dtype=np.uint8)
    ngroups = -(-out_c // INTEGRATED_GROUP)

    def run(r0, r1):
        rows = col[r0:r1]
        xbuf = np.empty((r1 - r0, INTEGRATED_GROUP, K), dtype=col.dtype)
        for gi in range(ngroups):
            c0 = gi * INTEGRATED_GROUP
            c1 = min(out_c, c0 + INTEGRATED_GROUP)
            wg = wmat[c0:c1]
            if c1 - c0 == INTEGRATED_GROUP:
                np.bitwise_xor(rows[:, None, :], wg[None, :, :], out=xbuf)
                x = xbuf
            else:
                x = np.bitwise_xor(rows[:, None, :], wg[None, :, :])
            pc = popcount_words(x).sum(axis=2, dtype=np.uint32)
            acc = border.interior - 2 * pc.astype(np.int64)
            border.apply(acc, r0, c0, c1)
            bits = threshold_sign_bits(acc, threshold[c0:c1], gamma_positive[c0:c1])
            out_bytes[r0:r1, gi] = np.packbits(bits, axis=1, bitorder="little")[:, 0]

    _for_rows(P, threads, run)
    return out_bytes.view(LANE_DTYPES[lane_bits]).reshape(P, wpp_out)


def _conv_acc_blocks(col, wmat, border, out_c, threads, consume):
    """Compute integer accumulators in channel blocks; consume(r0, r1, c0, c1, acc)."""
    P, K = col.shape

    def run(r0, r1):
        rows = col[r0:r1]
        xbuf = np.empty((r1 - r0, _SEPARATE_BLOCK, K), dtype=col.dtype)
        for c0 in range(0, out_c, _SEPARATE_BLOCK):
            c1 = min(out_c, c0 + _SEPARATE_BLOCK)
            wg = wmat[c0:c1]
            if c1 - c0 == _SEPARATE_BLOCK:
                np.bitwise_xor(rows[:, None, :], wg[None, :, :], out=xbuf)
                x = xbuf
            else:
                x = np.bitwise_xor(rows[:, None, :], wg[None, :, :])
            pc = popcount_words(x).sum(axis=2, dtype=np.uint32)
            acc = border.interior - 2 * pc.astype(np.int64)
            border.apply(acc, r0, c0, c1)
            consume(r0, r1, c0, c1, acc)

    _for_rows(P, threads, run)


def _conv_words_separate(col, wmat, border, threshold, gamma_positive,
                         out_c, lane_bits, threads):
    """Separate plan: emit one binarized byte per channel, then pack as a pass."""
    P = col.shape[0]
    channel_bytes = np.empty((P, out_c), dtype=np.uint8)

    def consume(r0, r1, c0, c1, acc):
        bits = threshold_sign_bits(acc, threshold[c0:c1], gamma_positive[c0:c1])
        channel_bytes[r0:r1, c0:c1] = bits

    _conv_acc_blocks(col, wmat, border, out_c, threads, consume)
    return pack_bit_array(channel_bytes, lane_bits)


def _check_conv_input(inp: BitTensor, geo: ConvGeometry, weights: BitTensor) -> None:
    if inp.shape.c != geo.in_channels:
        raise DimensionError(f"input has {inp.shape.c} channels, layer expects {geo.in_channels}")
    if inp.lane_bits != weights.lane_bits:
        raise DimensionError("input and weight lane widths differ")


def fused_binary_conv(inp: BitTensor, layer: FusedConvLayer, threads: int = 1) -> BitTensor:
    """Binary conv + bias + batch norm + binarize in one pass."""
    geo = layer.geometry
    _check_conv_input(inp, geo, layer.weights)
    n, h, w = inp.shape.n, inp.shape.h, inp.shape.w
    oh, ow = geo.out_size(h, w)
    lane = inp.lane_bits
    wmat = layer.weights.data.reshape(geo.out_channels, -1)
    border = _window_base(geo, h, w, layer.weights)
    kernel = _conv_words_integrated if layer.pack_integrated else _conv_words_separate
    out = np.empty((n, oh, ow, words_per_pixel(geo.out_channels, lane)),
                   dtype=LANE_DTYPES[lane])
    for b in range(n):
        col = _im2col_words(inp.data[b], geo.kernel_h, geo.kernel_w,
                            geo.stride_h, geo.stride_w, geo.pad_h, geo.pad_w)
        words = kernel(col, wmat, border, layer.threshold, layer.gamma_positive,
                       geo.out_channels, lane, threads)
        out[b] = words.reshape(oh, ow, -1)
    return BitTensor(Shape(n, oh, ow, geo.out_channels), lane, out)


def first_layer_acc(img: ByteTensor, weights: BitTensor, geo: ConvGeometry,
                    threads: int = 1) -> np.ndarray:
    """Integer conv accumulator of an 8-bit image against sign weights.

    Sums 2**i times the {0,1}-plane x sign-weight dot product over the 8
    bit planes, which reproduces the exact integer convolution of the byte
    values; zero-padded cells have zero plane bits and drop out. Returns
    int64 of shape (n, oh, ow, out_channels).
    """
    if img.shape.c != geo.in_channels:
        raise DimensionError(f"image has {img.shape.c} channels, layer expects {geo.in_channels}")
    n, h, w = img.shape.n, img.shape.h, img.shape.w
    oh, ow = geo.out_size(h, w)
    lane = weights.lane_bits
    wmat = weights.data.reshape(geo.out_channels, -1)
    out_c = geo.out_channels
    plane_words = [pack_bit_array((img.data >> i) & 1, lane) for i in range(8)]
    acc = np.zeros((n, oh * ow, out_c), dtype=np.int64)
    for b in range(n):
        cols = [_im2col_words(pw[b], geo.kernel_h, geo.kernel_w,
                              geo.stride_h, geo.stride_w, geo.pad_h, geo.pad_w)
                for pw in plane_words]
        P = cols[0].shape[0]
        out = acc[b]

        def run(r0, r1):
            for i, col in enumerate(cols):
                rows = col[r0:r1]
                plane_pc = popcount_words(rows).sum(axis=1, dtype=np.int64)
                for c0 in range(0, out_c, _SEPARATE_BLOCK):
                    c1 = min(out_c, c0 + _SEPARATE_BLOCK)
                    x = np.bitwise_and(rows[:, None, :], wmat[None, c0:c1, :])
                    both = popcount_words(x).sum(axis=2, dtype=np.int64)
                    out[r0:r1, c0:c1] += (2 * both - plane_pc[:, None]) * (1 << i)

        _for_rows(P, threads, run)
    return acc.reshape(n, oh, ow, out_c)


def first_layer_conv(img: ByteTensor, layer: FirstConvLayer, threads: int = 1) -> BitTensor:
    """Convolve an 8-bit image via its bit planes, then binarize."""
    geo = layer.geometry
    acc = first_layer_acc(img, layer.weights, geo, threads)
    n, oh, ow, out_c = acc.shape
    lane = layer.weights.lane_bits
    bits = threshold_sign_bits(acc, layer.threshold, layer.gamma_positive)
    words = pack_bit_array(bits.astype(np.uint8), lane)
    return BitTensor(Shape(n, oh, ow, out_c), lane, words)


def binary_maxpool(inp: BitTensor, pool: PoolGeometry) -> BitTensor:
    """Max pooling on binary data: bitwise OR over the window.

    Under the 0 <-> -1 / 1 <-> +1 encoding OR is exactly the max. Windows
    start at every stride step; cells past the input edge are ignored
    (zero words are the OR identity).
    """
    n, h, w = inp.shape.n, inp.shape.h, inp.shape.w
    wpp = inp.words_per_pixel
    oh, ow = pool.out_size(h, w)
    need_h = (oh - 1) * pool.stride_h + pool.window_h
    need_w = (ow - 1) * pool.stride_w + pool.window_w
    padded = np.zeros((n, need_h, need_w, wpp), dtype=inp.data.dtype)
    ch, cw = min(h, need_h), min(w, need_w)  # stride > window skips trailing cells
    padded[:, :ch, :cw] = inp.data[:, :ch, :cw]
    out = np.zeros((n, oh, ow, wpp), dtype=inp.data.dtype)
    for di in range(pool.window_h):
        for dj in range(pool.window_w):
            view = padded[:, di:di + (oh - 1) * pool.stride_h + 1:pool.stride_h,
                          dj:dj + (ow - 1) * pool.stride_w + 1:pool.stride_w]
            np.bitwise_or(out, view, out=out)
    return BitTensor(Shape(n, oh, ow, inp.shape.c), inp.lane_bits, out)


def flatten_bits(t: BitTensor) -> BitTensor:
    """Reshape (n, h, w, c) packed bits to (n, 1, 1, h*w*c)."""
    n, h, w, c = t.shape.as_tuple()
    flat_c = h * w * c
    if c % t.lane_bits == 0:
        words = t.data.reshape(n, 1, 1, -1)
    else:
        bits = unpack_bit_array(t.data, c).reshape(n, 1, 1, flat_c)
        words = pack_bit_array(bits, t.lane_bits)
    return BitTensor(Shape(n, 1, 1, flat_c), t.lane_bits, words)


def binary_dense(inp: BitTensor, layer: FusedConvLayer, threads: int = 1) -> BitTensor:
    """Fully connected binary layer: flatten, then a 1x1 fused conv."""
    flat = flatten_bits(inp)
    if flat.shape.c != layer.geometry.in_channels:
        raise DimensionError(
            f"flattened length {flat.shape.c} != weight row length {layer.geometry.in_channels}")
    return fused_binary_conv(flat, layer, threads)


def output_conv(inp: BitTensor, layer: OutputConvLayer, threads: int = 1) -> FloatTensor:
    """Full-precision output layer: packed conv accumulate, bias, optional BN."""
    geo = layer.geometry
    _check_conv_input(inp, geo, layer.weights)
    n, h, w = inp.shape.n, inp.shape.h, inp.shape.w
    oh, ow = geo.out_size(h, w)
    wmat = layer.weights.data.reshape(geo.out_channels, -1)
    border = _window_base(geo, h, w, layer.weights)
    out = np.empty((n, oh, ow, geo.out_channels), dtype=np.float64)
    for b in range(n):
        col = _im2col_words(inp.data[b], geo.kernel_h, geo.kernel_w,
                            geo.stride_h, geo.stride_w, geo.pad_h, geo.pad_w)
        acc = np.empty((col.shape[0], geo.out_channels), dtype=np.int64)

        def consume(r0, r1, c0, c1, block):
            acc[r0:r1, c0:c1] = block

        _conv_acc_blocks(col, wmat, border, geo.out_channels, threads, consume)
        x = acc + layer.bias.astype(np.float64)
        if layer.bn is not None:
            bn = layer.bn
            x = bn.gamma.astype(np.float64) * (x - bn.mean.astype(np.float64)) \
                / bn.std.astype(np.float64) + bn.beta.astype(np.float64)
        out[b] = x.reshape(oh, ow, -1)
    return FloatTensor(Shape(n, oh, ow, geo.out_channels), out)
