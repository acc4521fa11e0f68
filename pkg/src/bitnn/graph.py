"""Network assembly, offline fusion, bit-exact serialization, and inference.

A network is described as a flat list of raw layer specs (conv / dense /
pool / batchnorm / binarize / output-conv). The builder folds every
conv+batchnorm+binarize triple into a single thresholded binary layer; the
per-channel threshold is ``mean - beta * std / gamma - bias`` and only the
sign of gamma survives into the runtime layer. There is no unfused binary
execution path; the oracle module provides that for tests.

Model files ("PBIT" magic) are little-endian throughout and store packed
64-bit weight words plus the raw float32 parameters. Thresholds are never
stored: loading re-derives them through the same fusion code, keeping one
source of truth.
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    GraphError,
    InvalidParameterError,
    InvalidValueError,
    ModelFormatError,
    PrunableChannelError,
)
from .layers import (
    DEFAULT_INTEGRATE_THRESHOLD,
    BatchNormParams,
    ConvGeometry,
    FirstConvLayer,
    FusedConvLayer,
    LayerParams,
    OutputConvLayer,
    PoolGeometry,
    binary_dense,
    binary_maxpool,
    first_layer_conv,
    flatten_bits,
    fused_binary_conv,
    output_conv,
    schedule_conv,
)
from .tensors import (
    BitTensor,
    ByteTensor,
    FloatTensor,
    Shape,
    pack_bit_array,
    pack_channels,
    unpack_channels,
    words_per_pixel,
)

MODEL_MAGIC = b"PBIT"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIII")  # magic, version, crc32, layers, n, h, w, c
_MODEL_LANE_BITS = 64

_KIND_TAGS = {"first-conv": 1, "conv": 2, "dense": 3, "pool": 4,
              "output-conv": 5, "output-dense": 6}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

# Binary accumulators are kept in 64-bit ints; reject anything that could
# not also fit a 32-bit signed accumulator on a narrower backend.
_MAX_WINDOW_LEN = 2 ** 31 - 1


@dataclass
class RawLayerSpec:
    """One unfused layer as exported by a trainer."""

    kind: str
    geometry: ConvGeometry | PoolGeometry | None = None
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None


@dataclass
class GraphEntry:
    name: str
    kind: str
    op: object
    out_shape: Shape


def _as_f32(arr, count: int, what: str) -> np.ndarray:
    if arr is None:
        raise GraphError(f"missing parameter array {what}")
    arr = np.asarray(arr, dtype=np.float32).reshape(-1)
    if arr.shape != (count,):
        raise DimensionError(f"{what} has {arr.shape[0]} entries, expected {count}")
    return arr


def compute_threshold(params: LayerParams) -> np.ndarray:
    """Per-channel binarization threshold: mean - beta*std/gamma - bias."""
    gamma = params.gamma.astype(np.float64)
    if np.any(gamma == 0.0):
        ch = int(np.argwhere(params.gamma == 0)[0, 0])
        raise PrunableChannelError(
            f"channel {ch} has batch-norm scale 0; zero-scale channels must be "
            f"pruned before export")
    std = params.std.astype(np.float64)
    if np.any(std <= 0):
        raise InvalidParameterError("batch-norm std must be strictly positive")
    return params.mean.astype(np.float64) - params.beta.astype(np.float64) * std / gamma \
        - params.bias.astype(np.float64)


def _fuse_packed(geometry: ConvGeometry, weights: BitTensor, params: LayerParams) -> FusedConvLayer:
    threshold = compute_threshold(params)
    return FusedConvLayer(geometry=geometry, weights=weights, threshold=threshold,
                          gamma_positive=params.gamma > 0, params=params)


def fuse(conv_spec: RawLayerSpec, bn_spec: RawLayerSpec,
         lane_bits: int = _MODEL_LANE_BITS) -> FusedConvLayer:
    """Fold a conv spec and its batch-norm spec into one thresholded layer."""
    geo = conv_spec.geometry
    if not isinstance(geo, ConvGeometry):
        raise GraphError("conv spec carries no conv geometry")
    oc = geo.out_channels
    w = np.asarray(conv_spec.weights)
    if w.shape != (oc, geo.kernel_h, geo.kernel_w, geo.in_channels):
        raise DimensionError(f"weight shape {w.shape} does not match geometry")
    params = LayerParams(
        bias=_as_f32(conv_spec.bias if conv_spec.bias is not None else np.zeros(oc), oc, "bias"),
        gamma=_as_f32(bn_spec.gamma, oc, "gamma"),
        beta=_as_f32(bn_spec.beta, oc, "beta"),
        mean=_as_f32(bn_spec.mean, oc, "mean"),
        std=_as_f32(bn_spec.std, oc, "std"),
    )
    return _fuse_packed(geo, pack_channels(w, lane_bits), params)


def _dense_geometry(in_features: int, units: int) -> ConvGeometry:
    return ConvGeometry(1, 1, 1, 1, 0, 0, in_features, units)


def _output_layer(spec: RawLayerSpec, geometry: ConvGeometry,
                  lane_bits: int) -> OutputConvLayer:
    oc = geometry.out_channels
    w = np.asarray(spec.weights).reshape(oc, geometry.kernel_h, geometry.kernel_w,
                                         geometry.in_channels)
    bias = _as_f32(spec.bias if spec.bias is not None else np.zeros(oc), oc, "bias")
    bn = None
    if spec.gamma is not None:
        bn = BatchNormParams(gamma=_as_f32(spec.gamma, oc, "gamma"),
                             beta=_as_f32(spec.beta, oc, "beta"),
                             mean=_as_f32(spec.mean, oc, "mean"),
                             std=_as_f32(spec.std, oc, "std"))
    return OutputConvLayer(geometry=geometry, weights=pack_channels(w, lane_bits),
                           bias=bias, bn=bn)


class NetworkGraph:
    """Ordered executable layers with shape metadata. Immutable once built."""

    def __init__(self, input_shape: Shape, entries: list[GraphEntry],
                 lane_bits: int, integrate_threshold: int):
        self.input_shape = input_shape
        self.entries = entries
        self.lane_bits = lane_bits
        self.integrate_threshold = integrate_threshold

    @property
    def output_shape(self) -> Shape:
        return self.entries[-1].out_shape

    def layer_names(self) -> list[str]:
        return [e.name for e in self.entries]

    def _input_bits(self, img: ByteTensor) -> BitTensor:
        data = img.data
        if data.max(initial=0) > 1:
            raise InvalidValueError(
                "this network starts in the binary domain; input bytes must be 0 or 1")
        return BitTensor(img.shape, self.lane_bits, pack_bit_array(data, self.lane_bits))

    def _execute(self, img: ByteTensor, threads: int, taps: list | None,
                 times: list | None) -> FloatTensor:
        if img.shape != self.input_shape:
            raise DimensionError(f"input shape {img.shape} != model input {self.input_shape}")
        cur = img if self.entries[0].kind == "first-conv" else self._input_bits(img)
        for e in self.entries:
            t0 = time.perf_counter()
            if e.kind == "first-conv":
                cur = first_layer_conv(cur, e.op, threads)
            elif e.kind == "conv":
                cur = fused_binary_conv(cur, e.op, threads)
            elif e.kind == "dense":
                cur = binary_dense(cur, e.op, threads)
            elif e.kind == "pool":
                cur = binary_maxpool(cur, e.op)
            elif e.kind == "output-conv":
                cur = output_conv(cur, e.op, threads)
            elif e.kind == "output-dense":
                cur = output_conv(flatten_bits(cur), e.op, threads)
            else:  # pragma: no cover
                raise GraphError(f"unknown layer kind {e.kind!r}")
            if times is not None:
                times.append((e.name, time.perf_counter() - t0))
            if taps is not None:
                taps.append(EngineTap(e.name, e.kind, cur))
        assert isinstance(cur, FloatTensor)
        return cur

    def infer(self, img: ByteTensor, threads: int = 1) -> FloatTensor:
        """Run the network; returns the final full-precision tensor."""
        return self._execute(img, threads, None, None)

    def infer_timed(self, img: ByteTensor, threads: int = 1):
        """Like infer, but also returns [(layer name, seconds)] per layer."""
        times: list[tuple[str, float]] = []
        out = self._execute(img, threads, None, times)
        return out, times

    def taps(self, img: ByteTensor, threads: int = 1) -> list["EngineTap"]:
        """Run the network keeping every intermediate layer output."""
        taps: list[EngineTap] = []
        self._execute(img, threads, taps, None)
        return taps

    def to_raw_specs(self) -> list[RawLayerSpec]:
        """Reconstruct the unfused spec list (the oracle's input)."""
        specs: list[RawLayerSpec] = []
        for e in self.entries:
            if e.kind in ("first-conv", "conv"):
                op = e.op
                specs.append(RawLayerSpec("conv", geometry=op.geometry,
                                          weights=unpack_channels(op.weights),
                                          bias=op.params.bias))
                specs.append(RawLayerSpec("batchnorm", gamma=op.params.gamma,
                                          beta=op.params.beta, mean=op.params.mean,
                                          std=op.params.std))
                specs.append(RawLayerSpec("binarize"))
            elif e.kind == "dense":
                op = e.op
                g = op.geometry
                specs.append(RawLayerSpec("dense",
                                          weights=unpack_channels(op.weights)
                                          .reshape(g.out_channels, g.in_channels),
                                          bias=op.params.bias))
                specs.append(RawLayerSpec("batchnorm", gamma=op.params.gamma,
                                          beta=op.params.beta, mean=op.params.mean,
                                          std=op.params.std))
                specs.append(RawLayerSpec("binarize"))
            elif e.kind == "pool":
                specs.append(RawLayerSpec("pool", geometry=e.op))
            elif e.kind == "output-conv":
                op = e.op
                specs.append(RawLayerSpec(
                    "output-conv", geometry=op.geometry,
                    weights=unpack_channels(op.weights), bias=op.bias,
                    gamma=None if op.bn is None else op.bn.gamma,
                    beta=None if op.bn is None else op.bn.beta,
                    mean=None if op.bn is None else op.bn.mean,
                    std=None if op.bn is None else op.bn.std))
            elif e.kind == "output-dense":
                op = e.op
                g = op.geometry
                specs.append(RawLayerSpec(
                    "dense",
                    weights=unpack_channels(op.weights).reshape(g.out_channels, g.in_channels),
                    bias=op.bias,
                    gamma=None if op.bn is None else op.bn.gamma,
                    beta=None if op.bn is None else op.bn.beta,
                    mean=None if op.bn is None else op.bn.mean,
                    std=None if op.bn is None else op.bn.std))
        return specs

    def structurally_equal(self, other: "NetworkGraph") -> bool:
        """Word-for-word and float-bit-for-bit layer equality."""
        if self.input_shape != other.input_shape or len(self.entries) != len(other.entries):
            return False
        for a, b in zip(self.entries, other.entries):
            if a.name != b.name or a.kind != b.kind or a.out_shape != b.out_shape:
                return False
            if a.kind == "pool":
                if a.op != b.op:
                    return False
                continue
            if a.op.geometry != b.op.geometry or a.op.weights != b.op.weights:
                return False
            if a.kind in ("output-conv", "output-dense"):
                if not np.array_equal(a.op.bias.view(np.uint32), b.op.bias.view(np.uint32)):
                    return False
                if (a.op.bn is None) != (b.op.bn is None):
                    return False
                if a.op.bn is not None:
                    for f in ("gamma", "beta", "mean", "std"):
                        if not np.array_equal(getattr(a.op.bn, f).view(np.uint32),
                                              getattr(b.op.bn, f).view(np.uint32)):
                            return False
            else:
                for f in ("bias", "gamma", "beta", "mean", "std"):
                    if not np.array_equal(getattr(a.op.params, f).view(np.uint32),
                                          getattr(b.op.params, f).view(np.uint32)):
                        return False
                if not np.array_equal(a.op.threshold, b.op.threshold):
                    return False
        return True


@dataclass
class EngineTap:
    name: str
    kind: str
    value: BitTensor | FloatTensor


def build(specs: list[RawLayerSpec], input_shape: Shape,
          lane_bits: int = _MODEL_LANE_BITS,
          integrate_threshold: int = DEFAULT_INTEGRATE_THRESHOLD) -> NetworkGraph:
    """Assemble raw layer specs into an executable, fully fused graph."""
    if not specs:
        raise GraphError("a network needs at least one layer")
    entries: list[GraphEntry] = []
    n, h, w, c = input_shape.as_tuple()
    counters = {"conv": 0, "pool": 0, "dense": 0}
    i = 0
    while i < len(specs):
        spec = specs[i]
        first = i == 0
        last = i == len(specs) - 1
        if spec.kind == "conv":
            triple = (i + 2 < len(specs) and specs[i + 1].kind == "batchnorm"
                      and specs[i + 2].kind == "binarize")
            if not triple:
                raise GraphError(
                    f"conv at position {i} must be followed by batchnorm and binarize "
                    f"(use kind 'output-conv' for the full-precision output layer)")
            geo = spec.geometry
            if geo.in_channels != c:
                raise GraphError(f"conv at position {i} expects {geo.in_channels} input "
                                 f"channels but the running shape has {c}")
            fused = fuse(spec, specs[i + 1], lane_bits)
            counters["conv"] += 1
            h, w = geo.out_size(h, w)
            c = geo.out_channels
            if first:
                layer = FirstConvLayer(geometry=fused.geometry, weights=fused.weights,
                                       threshold=fused.threshold,
                                       gamma_positive=fused.gamma_positive,
                                       params=fused.params)
                kind = "first-conv"
            else:
                fused.pack_integrated = schedule_conv(fused, integrate_threshold).pack_integrated
                layer, kind = fused, "conv"
            entries.append(GraphEntry(f"conv{counters['conv']}", kind, layer, Shape(n, h, w, c)))
            i += 3
        elif spec.kind == "dense":
            in_features = h * w * c
            weights = np.asarray(spec.weights)
            if weights.ndim != 2:
                raise GraphError(f"dense weights must be 2-d, got {weights.shape}")
            units = weights.shape[0]
            if weights.shape[1] != in_features:
                raise GraphError(f"dense at position {i} expects row length "
                                 f"{weights.shape[1]} but the running shape flattens to {in_features}")
            geo = _dense_geometry(in_features, units)
            counters["dense"] += 1
            fused_tail = (i + 2 < len(specs) and specs[i + 1].kind == "batchnorm"
                          and specs[i + 2].kind == "binarize")
            if fused_tail:
                conv_like = RawLayerSpec("conv", geometry=geo,
                                         weights=weights.reshape(units, 1, 1, in_features),
                                         bias=spec.bias)
                fused = fuse(conv_like, specs[i + 1], lane_bits)
                fused.pack_integrated = schedule_conv(fused, integrate_threshold).pack_integrated
                h, w, c = 1, 1, units
                entries.append(GraphEntry(f"dense{counters['dense']}", "dense", fused,
                                          Shape(n, 1, 1, units)))
                i += 3
            else:
                merged = spec
                if i + 1 < len(specs) and specs[i + 1].kind == "batchnorm":
                    bn = specs[i + 1]
                    merged = RawLayerSpec("dense", weights=weights, bias=spec.bias,
                                          gamma=bn.gamma, beta=bn.beta,
                                          mean=bn.mean, std=bn.std)
                    i += 1
                if i != len(specs) - 1:
                    raise GraphError("a dense layer without binarize must be the final layer")
                layer = _output_layer(merged, geo, lane_bits)
                h, w, c = 1, 1, units
                entries.append(GraphEntry(f"dense{counters['dense']}", "output-dense",
                                          layer, Shape(n, 1, 1, units)))
                i += 1
        elif spec.kind == "pool":
            if first:
                raise GraphError("pooling cannot be the input layer")
            pg = spec.geometry
            if not isinstance(pg, PoolGeometry):
                raise GraphError("pool spec carries no pool geometry")
            counters["pool"] += 1
            h, w = pg.out_size(h, w)
            entries.append(GraphEntry(f"pool{counters['pool']}", "pool", pg, Shape(n, h, w, c)))
            i += 1
        elif spec.kind == "output-conv":
            if not last:
                raise GraphError("output-conv must be the final layer")
            geo = spec.geometry
            if geo.in_channels != c:
                raise GraphError(f"output-conv expects {geo.in_channels} input channels "
                                 f"but the running shape has {c}")
            counters["conv"] += 1
            layer = _output_layer(spec, geo, lane_bits)
            h, w = geo.out_size(h, w)
            c = geo.out_channels
            entries.append(GraphEntry(f"conv{counters['conv']}", "output-conv", layer,
                                      Shape(n, h, w, c)))
            i += 1
        elif spec.kind in ("batchnorm", "binarize"):
            raise GraphError(f"dangling {spec.kind} at position {i}")
        else:
            raise GraphError(f"unknown layer kind {spec.kind!r} at position {i}")
    if entries[-1].kind not in ("output-conv", "output-dense"):
        raise GraphError("the network must end with a full-precision output layer")
    for e in entries:
        if e.kind != "pool" and e.op.geometry.window_len > _MAX_WINDOW_LEN:
            raise GraphError(f"layer {e.name} window length overflows a 32-bit accumulator")
    return NetworkGraph(input_shape, entries, lane_bits, integrate_threshold)


# ---------------------------------------------------------------------------
# serialization


def _pack_words_bytes(t: BitTensor) -> bytes:
    return np.ascontiguousarray(t.data, dtype="<u8").tobytes()


def _param_bytes(*arrays: np.ndarray) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)


def _geometry_bytes(g: ConvGeometry) -> bytes:
    return struct.pack("<8I", g.kernel_h, g.kernel_w, g.stride_h, g.stride_w,
                       g.pad_h, g.pad_w, g.in_channels, g.out_channels)


def save(graph: NetworkGraph, path=None) -> bytes:
    """Serialize a graph to deterministic PBIT bytes; optionally write to path."""
    if graph.lane_bits != _MODEL_LANE_BITS:
        raise ModelFormatError("model files store 64-bit packed words; "
                               f"graph lane_bits={graph.lane_bits}")
    payload = bytearray()
    for e in graph.entries:
        payload += struct.pack("<I", _KIND_TAGS[e.kind])
        if e.kind == "pool":
            pg = e.op
            payload += struct.pack("<4I", pg.window_h, pg.window_w, pg.stride_h, pg.stride_w)
            continue
        op = e.op
        g = op.geometry
        if e.kind in ("dense", "output-dense"):
            payload += struct.pack("<II", g.in_channels, g.out_channels)
        else:
            payload += _geometry_bytes(g)
        payload += _pack_words_bytes(op.weights)
        if e.kind in ("first-conv", "conv", "dense"):
            p = op.params
            payload += _param_bytes(p.bias, p.gamma, p.beta, p.mean, p.std)
        else:
            payload += _param_bytes(op.bias)
            payload += struct.pack("<I", 0 if op.bn is None else 1)
            if op.bn is not None:
                payload += _param_bytes(op.bn.gamma, op.bn.beta, op.bn.mean, op.bn.std)
    header = _HEADER.pack(MODEL_MAGIC, MODEL_VERSION,
                          zlib.crc32(payload) & 0xFFFFFFFF, len(graph.entries),
                          *graph.input_shape.as_tuple())
    blob = header + bytes(payload)
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError("model file truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def f32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").copy()

    def u64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<u8").copy()


def _read_weights(r: _Reader, geo: ConvGeometry) -> BitTensor:
    wpp = words_per_pixel(geo.in_channels, _MODEL_LANE_BITS)
    count = geo.out_channels * geo.kernel_h * geo.kernel_w * wpp
    words = r.u64_array(count).reshape(geo.out_channels, geo.kernel_h, geo.kernel_w, wpp)
    try:
        return BitTensor(Shape(geo.out_channels, geo.kernel_h, geo.kernel_w,
                               geo.in_channels), _MODEL_LANE_BITS, words)
    except InvalidValueError as exc:
        raise ModelFormatError(f"corrupt weight words: {exc}") from exc


def load(source, integrate_threshold: int = DEFAULT_INTEGRATE_THRESHOLD) -> NetworkGraph:
    """Parse PBIT bytes (or a file path) back into an executable graph."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = bytes(source)
    if len(data) < _HEADER.size:
        raise ModelFormatError("model file truncated")
    magic, version, crc, layer_count, n, h, w, c = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    payload = data[_HEADER.size:]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ModelFormatError("payload checksum mismatch")
    try:
        input_shape = Shape(n, h, w, c)
    except DimensionError as exc:
        raise ModelFormatError(f"invalid input shape: {exc}") from exc
    r = _Reader(payload)
    entries: list[GraphEntry] = []
    counters = {"conv": 0, "pool": 0, "dense": 0}
    cur = (n, h, w, c)
    for idx in range(layer_count):
        tag = r.u32()
        kind = _TAG_KINDS.get(tag)
        if kind is None:
            raise ModelFormatError(f"unknown layer tag {tag} in record {idx}")
        try:
            if kind == "pool":
                pg = PoolGeometry(*r.u32(4))
                counters["pool"] += 1
                oh, ow = pg.out_size(cur[1], cur[2])
                cur = (n, oh, ow, cur[3])
                entries.append(GraphEntry(f"pool{counters['pool']}", "pool", pg, Shape(*cur)))
                continue
            if kind in ("dense", "output-dense"):
                in_features, units = r.u32(2)
                geo = _dense_geometry(in_features, units)
            else:
                geo = ConvGeometry(*r.u32(8))
            weights = _read_weights(r, geo)
            oc = geo.out_channels
            if kind in ("first-conv", "conv", "dense"):
                params = LayerParams(bias=r.f32_array(oc), gamma=r.f32_array(oc),
                                     beta=r.f32_array(oc), mean=r.f32_array(oc),
                                     std=r.f32_array(oc))
                fused = _fuse_packed(geo, weights, params)
                if kind == "first-conv":
                    op = FirstConvLayer(geometry=geo, weights=weights,
                                        threshold=fused.threshold,
                                        gamma_positive=fused.gamma_positive, params=params)
                else:
                    fused.pack_integrated = schedule_conv(
                        fused, integrate_threshold).pack_integrated
                    op = fused
            else:
                bias = r.f32_array(oc)
                bn = None
                if r.u32():
                    bn = BatchNormParams(gamma=r.f32_array(oc), beta=r.f32_array(oc),
                                         mean=r.f32_array(oc), std=r.f32_array(oc))
                op = OutputConvLayer(geometry=geo, weights=weights, bias=bias, bn=bn)
        except (DimensionError, InvalidValueError) as exc:
            raise ModelFormatError(f"corrupt record {idx}: {exc}") from exc
        if kind in ("dense", "output-dense"):
            expected = cur[1] * cur[2] * cur[3]
            if geo.in_channels != expected:
                raise ModelFormatError(f"record {idx}: dense expects {geo.in_channels} "
                                       f"inputs, running shape flattens to {expected}")
            cur = (n, 1, 1, geo.out_channels)
            counters["dense"] += 1
            name = f"dense{counters['dense']}"
        else:
            if geo.in_channels != cur[3]:
                raise ModelFormatError(f"record {idx}: channel chain broken")
            try:
                oh, ow = geo.out_size(cur[1], cur[2])
            except DimensionError as exc:
                raise ModelFormatError(f"record {idx}: {exc}") from exc
            cur = (n, oh, ow, geo.out_channels)
            counters["conv"] += 1
            name = f"conv{counters['conv']}"
        entries.append(GraphEntry(name, kind, op, Shape(*cur)))
    if r.pos != len(payload):
        raise ModelFormatError("trailing bytes after the last record")
    if not entries or entries[-1].kind not in ("output-conv", "output-dense"):
        raise ModelFormatError("model does not end with a full-precision layer")
    if entries[0].kind in ("conv",):
        raise ModelFormatError("first binary conv record must use the first-conv tag")
    return NetworkGraph(input_shape, entries, _MODEL_LANE_BITS, integrate_threshold)


def infer(graph: NetworkGraph, img: ByteTensor, threads: int = 1) -> FloatTensor:
    """Module-level convenience wrapper around NetworkGraph.infer."""
    return graph.infer(img, threads)


def serialized_size_float32(graph: NetworkGraph) -> int:
    """Byte size this model would take with float32 weights instead of bits.

    Mirrors the PBIT record structure exactly, with each weight element at
    4 bytes; used to report the compression ratio of the packed format.
    """
    total = _HEADER.size
    for e in graph.entries:
        total += 4  # kind tag
        if e.kind == "pool":
            total += 16
            continue
        g = e.op.geometry
        total += 8 if e.kind in ("dense", "output-dense") else 32
        total += 4 * g.out_channels * g.kernel_h * g.kernel_w * g.in_channels
        if e.kind in ("first-conv", "conv", "dense"):
            total += 5 * 4 * g.out_channels
        else:
            total += 4 * g.out_channels + 4
            if e.op.bn is not None:
                total += 4 * 4 * g.out_channels
    return total
