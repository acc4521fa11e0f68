"""Full-precision reference path used to prove the packed engine bit-exact.

Everything here is deliberately plain: double-precision nested-loop
convolution, the unfused bias -> batch-norm -> sign pipeline, and a network
emulator that mirrors a graph's raw layer specs. Speed is a non-goal; the
engine must match this module exactly, never the other way around.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidParameterError
from .layers import ConvGeometry, PoolGeometry
from .tensors import ByteTensor, unpack_bit_array

__all__ = [
    "oracle_conv",
    "oracle_bn_sign",
    "bn_via_threshold",
    "OracleNet",
    "OracleTap",
    "verify_graph",
    "VerifyReport",
]


def oracle_conv(inp: np.ndarray, weights: np.ndarray, geo: ConvGeometry) -> np.ndarray:
    """Direct nested-loop convolution with zero padding, in float64.

    ``inp`` is (n, h, w, c); ``weights`` is (oc, kh, kw, c) with +-1 values.
    Padded border cells hold the value 0 and therefore add nothing.
    """
    inp = np.asarray(inp, dtype=np.float64)
    n, h, w, c = inp.shape
    if c != geo.in_channels or weights.shape != (geo.out_channels, geo.kernel_h,
                                                 geo.kernel_w, geo.in_channels):
        raise DimensionError("conv operand shapes do not match the geometry")
    oh, ow = geo.out_size(h, w)
    padded = np.zeros((n, h + 2 * geo.pad_h, w + 2 * geo.pad_w, c), dtype=np.float64)
    padded[:, geo.pad_h:geo.pad_h + h, geo.pad_w:geo.pad_w + w] = inp
    wmat = weights.reshape(geo.out_channels, -1).astype(np.float64)
    out = np.empty((n, oh, ow, geo.out_channels), dtype=np.float64)
    for b in range(n):
        for i in range(oh):
            hs = i * geo.stride_h
            for j in range(ow):
                ws = j * geo.stride_w
                patch = padded[b, hs:hs + geo.kernel_h, ws:ws + geo.kernel_w]
                out[b, i, j] = wmat @ patch.ravel()
    return out


def oracle_bn_sign(x: np.ndarray, bias, gamma, beta, mean, std) -> np.ndarray:
    """Unfused bias -> batch norm -> sign: returns {0,1} bits (1 iff bn output >= 0)."""
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise InvalidParameterError("batch-norm std must be strictly positive")
    x2 = np.asarray(x, dtype=np.float64) + np.asarray(bias, dtype=np.float64)
    x3 = np.asarray(gamma, dtype=np.float64) * (x2 - np.asarray(mean, dtype=np.float64)) \
        / std + np.asarray(beta, dtype=np.float64)
    return (x3 >= 0).astype(np.uint8)


def bn_via_threshold(acc, bias, gamma, beta, mean, std):
    """The folded form gamma/std * (acc - threshold); used to validate the algebra."""
    acc = np.asarray(acc, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    thr = np.asarray(mean, dtype=np.float64) - np.asarray(beta, dtype=np.float64) \
        * std / gamma - np.asarray(bias, dtype=np.float64)
    return gamma / std * (acc - thr)


def _oracle_pool(x: np.ndarray, pool: PoolGeometry) -> np.ndarray:
    n, h, w, _ = x.shape
    oh, ow = pool.out_size(h, w)
    out = np.empty((n, oh, ow, x.shape[3]), dtype=x.dtype)
    for i in range(oh):
        hs = i * pool.stride_h
        for j in range(ow):
            ws = j * pool.stride_w
            window = x[:, hs:min(hs + pool.window_h, h), ws:min(ws + pool.window_w, w)]
            out[:, i, j] = window.max(axis=(1, 2))
    return out


def _real_output(acc: np.ndarray, spec) -> np.ndarray:
    out = acc + spec.bias.astype(np.float64)
    if spec.gamma is not None:
        out = spec.gamma.astype(np.float64) * (out - spec.mean.astype(np.float64)) \
            / spec.std.astype(np.float64) + spec.beta.astype(np.float64)
    return out


@dataclass
class OracleTap:
    name: str
    kind: str                # "bits" or "float"
    value: np.ndarray        # {0,1} bits for binary layers, float64 otherwise


class OracleNet:
    """Executes a network's raw (unfused) layer specs in double precision."""

    def __init__(self, specs, input_shape):
        self.specs = specs
        self.input_shape = input_shape

    def run(self, img: ByteTensor) -> list[OracleTap]:
        specs = self.specs
        x = img.data.astype(np.float64)
        if specs[0].kind != "conv":
            # Network starts in the binary domain: bytes {0,1} are sign bits.
            x = x * 2.0 - 1.0
        taps: list[OracleTap] = []
        counters = {"conv": 0, "pool": 0, "dense": 0}
        i = 0
        while i < len(specs):
            spec = specs[i]
            if spec.kind == "conv":
                bn = specs[i + 1]
                counters["conv"] += 1
                acc = oracle_conv(x, spec.weights, spec.geometry)
                bits = oracle_bn_sign(acc, spec.bias, bn.gamma, bn.beta, bn.mean, bn.std)
                taps.append(OracleTap(f"conv{counters['conv']}", "bits", bits))
                x = bits.astype(np.float64) * 2.0 - 1.0
                i += 3
            elif spec.kind == "dense":
                flat = x.reshape(x.shape[0], -1)
                acc = flat @ spec.weights.astype(np.float64).T
                counters["dense"] += 1
                fused_tail = (i + 2 < len(specs) and specs[i + 1].kind == "batchnorm"
                              and specs[i + 2].kind == "binarize")
                if fused_tail:
                    bn = specs[i + 1]
                    bits = oracle_bn_sign(acc, spec.bias, bn.gamma, bn.beta, bn.mean, bn.std)
                    bits = bits.reshape(x.shape[0], 1, 1, -1)
                    taps.append(OracleTap(f"dense{counters['dense']}", "bits", bits))
                    x = bits.astype(np.float64) * 2.0 - 1.0
                    i += 3
                else:
                    out = _real_output(acc, spec).reshape(x.shape[0], 1, 1, -1)
                    taps.append(OracleTap(f"dense{counters['dense']}", "float", out))
                    x = out
                    i += 1
            elif spec.kind == "pool":
                counters["pool"] += 1
                x = _oracle_pool(x, spec.geometry)
                taps.append(OracleTap(f"pool{counters['pool']}", "bits",
                                      (x > 0).astype(np.uint8)))
                i += 1
            elif spec.kind == "output-conv":
                counters["conv"] += 1
                acc = oracle_conv(x, spec.weights, spec.geometry)
                out = _real_output(acc, spec)
                taps.append(OracleTap(f"conv{counters['conv']}", "float", out))
                x = out
                i += 1
            else:
                raise DimensionError(f"oracle cannot execute spec kind {spec.kind!r} at {i}")
        return taps


@dataclass
class VerifyReport:
    ok: bool
    trials: int
    seed: int
    mismatch_trial: int | None = None
    mismatch_layer: str | None = None
    mismatch_index: tuple | None = None

    def summary(self) -> str:
        if self.ok:
            return f"verify: {self.trials} trials, all layers bit-exact (seed {self.seed})"
        return (f"verify: MISMATCH on trial {self.mismatch_trial} at layer "
                f"{self.mismatch_layer}, element {self.mismatch_index} (seed {self.seed})")


def verify_graph(graph, trials: int, seed: int, threads: int = 1) -> VerifyReport:
    """Run random inputs through the fused engine and the oracle; compare taps."""
    rng = np.random.default_rng(seed)
    oracle = OracleNet(graph.to_raw_specs(), graph.input_shape)
    byte_input = graph.entries[0].kind == "first-conv"
    high = 256 if byte_input else 2
    for t in range(trials):
        data = rng.integers(0, high, size=graph.input_shape.as_tuple(), dtype=np.uint8)
        img = ByteTensor(graph.input_shape, data)
        engine_taps = graph.taps(img, threads=threads)
        oracle_taps = oracle.run(img)
        for etap, otap in zip(engine_taps, oracle_taps):
            if otap.kind == "bits":
                got = unpack_bit_array(etap.value.data, etap.value.shape.c)
            else:
                got = etap.value.data
            want = otap.value.reshape(got.shape)
            same = got == want
            if not same.all():
                idx = tuple(int(v) for v in np.argwhere(~same)[0])
                return VerifyReport(False, trials, seed, t, etap.name, idx)
    return VerifyReport(True, trials, seed)
