"""Random-weight reference topologies for tests, benchmarks, and demos.

Channel progressions follow the classic AlexNet / VGG16 / YOLOv2-Tiny
layouts; ``width`` scales the channel counts and ``input_hw`` the spatial
size so the same shapes run at desk scale. Weights are random signs and
batch-norm statistics are drawn so that thresholds land inside the
plausible accumulator range (outputs actually vary).
"""

from __future__ import annotations

import numpy as np

from .layers import ConvGeometry, PoolGeometry
from .graph import RawLayerSpec
from .tensors import Shape


def random_signs(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.integers(0, 2, size=shape, dtype=np.int8) << 1) - 1


def _bn_arrays(rng, out_c: int, acc_scale: float):
    gamma = (rng.uniform(0.2, 2.0, out_c) * random_signs(rng, out_c)).astype(np.float32)
    beta = rng.normal(0.0, 1.0, out_c).astype(np.float32)
    mean = rng.normal(0.0, acc_scale, out_c).astype(np.float32)
    std = rng.uniform(0.5, 2.0, out_c).astype(np.float32)
    return gamma, beta, mean, std


def conv_triple(rng, in_c: int, out_c: int, kernel: int = 3, stride: int = 1,
                pad: int | None = None, acc_scale: float | None = None):
    """conv + batchnorm + binarize specs with random signs and stats."""
    if pad is None:
        pad = kernel // 2
    geo = ConvGeometry(kernel, kernel, stride, stride, pad, pad, in_c, out_c)
    if acc_scale is None:
        acc_scale = max(1.0, np.sqrt(geo.window_len) / 2)
    gamma, beta, mean, std = _bn_arrays(rng, out_c, acc_scale)
    return [
        RawLayerSpec("conv", geometry=geo,
                     weights=random_signs(rng, (out_c, kernel, kernel, in_c)),
                     bias=rng.normal(0.0, 1.0, out_c).astype(np.float32)),
        RawLayerSpec("batchnorm", gamma=gamma, beta=beta, mean=mean, std=std),
        RawLayerSpec("binarize"),
    ]


def dense_triple(rng, in_features: int, units: int):
    gamma, beta, mean, std = _bn_arrays(rng, units, max(1.0, np.sqrt(in_features) / 2))
    return [
        RawLayerSpec("dense", weights=random_signs(rng, (units, in_features)),
                     bias=rng.normal(0.0, 1.0, units).astype(np.float32)),
        RawLayerSpec("batchnorm", gamma=gamma, beta=beta, mean=mean, std=std),
        RawLayerSpec("binarize"),
    ]


def pool_spec(window: int = 2, stride: int = 2):
    return RawLayerSpec("pool", geometry=PoolGeometry(window, window, stride, stride))


def output_conv_spec(rng, in_c: int, out_c: int, kernel: int = 1):
    geo = ConvGeometry(kernel, kernel, 1, 1, kernel // 2, kernel // 2, in_c, out_c)
    return RawLayerSpec("output-conv", geometry=geo,
                        weights=random_signs(rng, (out_c, kernel, kernel, in_c)),
                        bias=rng.normal(0.0, 1.0, out_c).astype(np.float32))


def output_dense_spec(rng, in_features: int, units: int):
    return RawLayerSpec("dense", weights=random_signs(rng, (units, in_features)),
                        bias=rng.normal(0.0, 1.0, units).astype(np.float32))


def _scaled(base: int, width: float) -> int:
    return max(1, int(round(base * width)))


def alexnet_specs(rng, input_hw: int = 227, width: float = 1.0, classes: int = 1000):
    """AlexNet-shaped: 5 conv stages, 3 pools, 2 binary FC, real FC out."""
    c1, c2, c3, c4, c5 = (_scaled(c, width) for c in (96, 256, 384, 384, 256))
    fc = _scaled(4096, width)
    specs = []
    specs += conv_triple(rng, 3, c1, kernel=11, stride=4, pad=2)
    specs.append(pool_spec(3, 2))
    specs += conv_triple(rng, c1, c2, kernel=5, pad=2)
    specs.append(pool_spec(3, 2))
    specs += conv_triple(rng, c2, c3)
    specs += conv_triple(rng, c3, c4)
    specs += conv_triple(rng, c4, c5)
    specs.append(pool_spec(3, 2))
    hw = input_hw
    hw = (hw + 4 - 11) // 4 + 1
    for _ in range(3):
        hw = -(-hw // 2)
    flat = hw * hw * c5
    specs += dense_triple(rng, flat, fc)
    specs += dense_triple(rng, fc, fc)
    specs.append(output_dense_spec(rng, fc, classes))
    return specs, Shape(1, input_hw, input_hw, 3)


def vgg16_specs(rng, input_hw: int = 224, width: float = 1.0, classes: int = 1000):
    """VGG16-shaped: 13 convs in 5 pooled blocks, 2 binary FC, real FC out."""
    blocks = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)]
    fc = _scaled(4096, width)
    specs = []
    in_c = 3
    hw = input_hw
    for count, ch in blocks:
        out_c = _scaled(ch, width)
        for _ in range(count):
            specs += conv_triple(rng, in_c, out_c)
            in_c = out_c
        specs.append(pool_spec(2, 2))
        hw = -(-hw // 2)
    flat = hw * hw * in_c
    specs += dense_triple(rng, flat, fc)
    specs += dense_triple(rng, fc, fc)
    specs.append(output_dense_spec(rng, fc, classes))
    return specs, Shape(1, input_hw, input_hw, 3)


def yolov2_tiny_specs(rng, input_hw: int = 416, width: float = 1.0,
                      out_channels: int = 125):
    """YOLOv2-Tiny-shaped: 8 binary 3x3 convs + 1x1 real output conv (conv9)."""
    chans = [_scaled(c, width) for c in (16, 32, 64, 128, 256, 512, 1024, 1024)]
    specs = []
    in_c = 3
    for i, out_c in enumerate(chans[:6]):
        specs += conv_triple(rng, in_c, out_c)
        specs.append(pool_spec(2, 2 if i < 5 else 1))
        in_c = out_c
    specs += conv_triple(rng, in_c, chans[6])
    specs += conv_triple(rng, chans[6], chans[7])
    specs.append(output_conv_spec(rng, chans[7], out_channels, kernel=1))
    return specs, Shape(1, input_hw, input_hw, 3)
