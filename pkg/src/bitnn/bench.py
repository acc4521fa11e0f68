"""Per-layer inference benchmark harness.

cmd_bench runs a model ``repeats`` times after one warmup and reports the
median wall time per layer (monotonic clock), the median end-to-end time,
and throughput. The report renders as a text table, JSON, CSV, and a
per-layer bar figure.
"""

from __future__ import annotations

import json
import os
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .graph import NetworkGraph
from .layers import ConvGeometry, FusedConvLayer, LayerParams, fused_binary_conv, schedule_conv
from .oracle import oracle_conv
from .tensors import ByteTensor, pack_channels

MIN_REPEATS = 3


@dataclass
class LayerTiming:
    name: str
    median_ms: float


@dataclass
class BenchReport:
    model: str
    repeats: int
    threads: int
    layers: list[LayerTiming]
    total_ms: float
    throughput: float          # inferences per second
    oracle_compare: dict | None = None

    def to_json_dict(self) -> dict:
        d = {
            "model": self.model,
            "repeats": self.repeats,
            "threads": self.threads,
            "layers": [{"name": t.name, "median_ms": t.median_ms} for t in self.layers],
            "total_ms": self.total_ms,
            "throughput_per_s": self.throughput,
        }
        if self.oracle_compare is not None:
            d["oracle_compare"] = self.oracle_compare
        return d

    def to_text(self) -> str:
        width = max(len(t.name) for t in self.layers)
        lines = [f"model: {self.model}  repeats: {self.repeats}  threads: {self.threads}"]
        for t in self.layers:
            lines.append(f"  {t.name:<{width}}  {t.median_ms:10.3f} ms")
        lines.append(f"  {'total':<{width}}  {self.total_ms:10.3f} ms"
                     f"  ({self.throughput:.2f} inf/s)")
        if self.oracle_compare is not None:
            c = self.oracle_compare
            lines.append(f"  fused {c['fused_ms']:.3f} ms vs oracle {c['oracle_ms']:.3f} ms"
                         f" on {c['shape']}: {c['speedup']:.1f}x")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("layer,median_ms\n")
            for t in self.layers:
                f.write(f"{t.name},{t.median_ms:.6f}\n")
            f.write(f"total,{self.total_ms:.6f}\n")

    def render_figure(self, path) -> None:
        """Horizontal bar chart of per-layer median times."""
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        names = [t.name for t in self.layers]
        values = [t.median_ms for t in self.layers]
        fig, ax = plt.subplots(figsize=(7, 0.4 * len(names) + 1.5))
        ax.barh(range(len(names)), values, color="#3b6ea5")
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names)
        ax.invert_yaxis()
        ax.set_xlabel("median wall time (ms)")
        ax.set_title(f"{self.model}: per-layer time, {self.repeats} repeats")
        ax.grid(axis="x", alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)


def _bench_input(graph: NetworkGraph, seed: int) -> ByteTensor:
    rng = np.random.default_rng(seed)
    high = 256 if graph.entries[0].kind == "first-conv" else 2
    data = rng.integers(0, high, size=graph.input_shape.as_tuple(), dtype=np.uint8)
    return ByteTensor(graph.input_shape, data)


def run_benchmark(graph: NetworkGraph, repeats: int = 5, threads: int = 1,
                  seed: int = 0, model_name: str = "model") -> BenchReport:
    if repeats < MIN_REPEATS:
        raise ValueError(f"repeats must be >= {MIN_REPEATS}")
    img = _bench_input(graph, seed)
    graph.infer_timed(img, threads=threads)  # warmup
    per_layer: dict[str, list[float]] = {name: [] for name in graph.layer_names()}
    totals = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        _, times = graph.infer_timed(img, threads=threads)
        totals.append(time.perf_counter() - t0)
        for name, dt in times:
            per_layer[name].append(dt)
    layers = [LayerTiming(name, statistics.median(v) * 1000.0)
              for name, v in per_layer.items()]
    total_ms = statistics.median(totals) * 1000.0
    return BenchReport(model=model_name, repeats=repeats, threads=threads,
                       layers=layers, total_ms=total_ms,
                       throughput=1000.0 / total_ms if total_ms > 0 else float("inf"))


def fused_vs_oracle_speedup(in_channels: int = 256, out_channels: int = 256,
                            kernel: int = 3, input_hw: int = 32,
                            repeats: int = 5, threads: int | None = None,
                            seed: int = 0) -> dict:
    """Paired measurement: packed fused conv vs the float64 oracle conv.

    The fused side uses the engine's data-parallel task pool (defaults to
    all cores); the oracle is single-threaded by contract.
    """
    if threads is None:
        threads = os.cpu_count() or 1
    rng = np.random.default_rng(seed)
    geo = ConvGeometry(kernel, kernel, 1, 1, kernel // 2, kernel // 2,
                       in_channels, out_channels)
    wsigns = (rng.integers(0, 2, size=(out_channels, kernel, kernel, in_channels),
                           dtype=np.int8) << 1) - 1
    params = LayerParams(
        bias=np.zeros(out_channels, np.float32),
        gamma=np.ones(out_channels, np.float32),
        beta=np.zeros(out_channels, np.float32),
        mean=rng.normal(0, np.sqrt(geo.window_len) / 2, out_channels).astype(np.float32),
        std=np.ones(out_channels, np.float32),
    )
    layer = FusedConvLayer(geometry=geo, weights=pack_channels(wsigns),
                           threshold=params.mean.astype(np.float64),
                           gamma_positive=params.gamma > 0, params=params)
    layer.pack_integrated = schedule_conv(layer).pack_integrated
    xsigns = (rng.integers(0, 2, size=(1, input_hw, input_hw, in_channels),
                           dtype=np.int8) << 1) - 1
    packed = pack_channels(xsigns)

    def timed(fn):
        fn()  # warmup
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        return statistics.median(samples) * 1000.0

    fused_ms = timed(lambda: fused_binary_conv(packed, layer, threads=threads))
    oracle_ms = timed(lambda: oracle_conv(xsigns, wsigns, geo))
    return {
        "shape": f"{in_channels}->{out_channels} {kernel}x{kernel} @ {input_hw}x{input_hw}",
        "repeats": repeats,
        "threads": threads,
        "fused_ms": fused_ms,
        "oracle_ms": oracle_ms,
        "speedup": oracle_ms / fused_ms,
    }
