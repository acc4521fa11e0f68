"""Shared builders for randomized layer/network test cases."""

from __future__ import annotations

import numpy as np

from bitnn.graph import RawLayerSpec, fuse
from bitnn.layers import ConvGeometry, FusedConvLayer, schedule_conv
from bitnn.tensors import pack_channels


def rand_signs(rng, shape):
    return (rng.integers(0, 2, size=shape, dtype=np.int8) << 1) - 1


def rand_conv_specs(rng, in_c, out_c, kernel=3, stride=1, pad=1, acc_scale=None,
                    mean_override=None, gamma_sign=None, beta_zero=False):
    """A (conv, batchnorm) spec pair with controllable statistics.

    ``mean_override``/``beta_zero`` let tests construct exact acc == threshold
    ties: with beta = 0 the threshold is mean - bias, both float32.
    """
    geo = ConvGeometry(kernel, kernel, stride, stride, pad, pad, in_c, out_c)
    if acc_scale is None:
        acc_scale = max(1.0, np.sqrt(geo.window_len) / 2)
    gamma = rng.uniform(0.2, 2.0, out_c).astype(np.float32)
    if gamma_sign is None:
        gamma *= rand_signs(rng, out_c)
    else:
        gamma *= np.float32(gamma_sign)
    beta = (np.zeros(out_c) if beta_zero else rng.normal(0, 1.0, out_c)).astype(np.float32)
    mean = (mean_override if mean_override is not None
            else rng.normal(0.0, acc_scale, out_c)).astype(np.float32)
    std = rng.uniform(0.5, 2.0, out_c).astype(np.float32)
    bias = rng.normal(0, 1.0, out_c).astype(np.float32)
    conv = RawLayerSpec("conv", geometry=geo,
                        weights=rand_signs(rng, (out_c, kernel, kernel, in_c)),
                        bias=bias)
    bn = RawLayerSpec("batchnorm", gamma=gamma, beta=beta, mean=mean, std=std)
    return conv, bn


def rand_fused_layer(rng, in_c, out_c, kernel=3, stride=1, pad=1, **kw) -> tuple:
    """Random fused layer plus the raw specs it was built from."""
    conv, bn = rand_conv_specs(rng, in_c, out_c, kernel, stride, pad, **kw)
    layer = fuse(conv, bn)
    layer.pack_integrated = schedule_conv(layer).pack_integrated
    return layer, conv, bn


def tie_layer(rng, in_c, out_c, acc_value, gamma_sign, kernel=1, stride=1, pad=0):
    """Fused layer whose threshold equals ``acc_value`` exactly on every channel.

    Uses beta = 0 and integer-valued bias/mean so the threshold
    mean - beta*std/gamma - bias lands exactly on the integer accumulator.
    """
    bias_int = float(rng.integers(-3, 4))
    mean = np.full(out_c, acc_value + bias_int, dtype=np.float32)
    conv, bn = rand_conv_specs(rng, in_c, out_c, kernel, stride, pad,
                               mean_override=mean, gamma_sign=gamma_sign,
                               beta_zero=True)
    conv.bias = np.full(out_c, bias_int, dtype=np.float32)
    layer = fuse(conv, bn)
    layer.pack_integrated = schedule_conv(layer).pack_integrated
    return layer, conv, bn


def pack_layer_from_arrays(geometry, wsigns, bias, gamma, beta, mean, std):
    """Build a FusedConvLayer directly from parameter arrays (no validation path)."""
    from bitnn.layers import LayerParams
    params = LayerParams(bias=np.asarray(bias, np.float32),
                         gamma=np.asarray(gamma, np.float32),
                         beta=np.asarray(beta, np.float32),
                         mean=np.asarray(mean, np.float32),
                         std=np.asarray(std, np.float32))
    thr = params.mean.astype(np.float64) \
        - params.beta.astype(np.float64) * params.std.astype(np.float64) \
        / params.gamma.astype(np.float64) \
        - params.bias.astype(np.float64)
    return FusedConvLayer(geometry=geometry, weights=pack_channels(wsigns),
                          threshold=thr, gamma_positive=params.gamma > 0,
                          params=params)
