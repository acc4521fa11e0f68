import numpy as np
import pytest

from helpers import pack_layer_from_arrays, rand_fused_layer, rand_signs, tie_layer

from bitnn.errors import DimensionError, InvalidParameterError
from bitnn.kernels import binary_dot, PackedVectorView
from bitnn.layers import (
    BatchNormParams,
    ConvGeometry,
    FirstConvLayer,
    LayerParams,
    OutputConvLayer,
    PoolGeometry,
    _conv_words_integrated,
    _conv_words_separate,
    _im2col_words,
    _window_base,
    binary_dense,
    binary_maxpool,
    first_layer_acc,
    first_layer_conv,
    flatten_bits,
    fused_binary_conv,
    output_conv,
    schedule_conv,
    threshold_sign_bits,
)
from bitnn.oracle import oracle_bn_sign, oracle_conv
from bitnn.tensors import ByteTensor, Shape, pack_channels, unpack_bit_array, unpack_channels


def four_case_rule(acc, thr, gamma_positive):
    """The explicit four-case binarization table, as a reference."""
    if gamma_positive:
        return 1 if acc >= thr else 0
    return 1 if acc <= thr else 0


class TestThresholdRule:
    def test_above_threshold_positive_gamma(self):
        assert threshold_sign_bits(np.array([5]), np.array([3.0]),
                                   np.array([True]))[0]

    def test_tie_with_negative_gamma(self):
        assert threshold_sign_bits(np.array([3]), np.array([3.0]),
                                   np.array([False]))[0]

    @pytest.mark.parametrize("gamma_positive", [True, False])
    @pytest.mark.parametrize("acc,thr", [(2, 3.0), (3, 3.0), (4, 3.0)])
    def test_logic_form_matches_four_cases(self, acc, thr, gamma_positive):
        got = bool(threshold_sign_bits(np.array([acc]), np.array([thr]),
                                       np.array([gamma_positive]))[0])
        assert got == bool(four_case_rule(acc, thr, gamma_positive))


def oracle_fused_bits(img_signs, conv_spec, bn_spec):
    """Reference pipeline: float conv -> bias -> batch norm -> sign."""
    acc = oracle_conv(img_signs, conv_spec.weights, conv_spec.geometry)
    return oracle_bn_sign(acc, conv_spec.bias, bn_spec.gamma, bn_spec.beta,
                          bn_spec.mean, bn_spec.std)


class TestFusedConv:
    @pytest.mark.parametrize("case", [
        dict(in_c=8, out_c=8, kernel=3, stride=1, pad=1, hw=6),
        dict(in_c=3, out_c=5, kernel=3, stride=2, pad=1, hw=9),
        dict(in_c=70, out_c=13, kernel=1, stride=1, pad=0, hw=4),
        dict(in_c=64, out_c=16, kernel=2, stride=1, pad=0, hw=5),
        dict(in_c=17, out_c=9, kernel=3, stride=1, pad=2, hw=5),
    ])
    def test_matches_unfused_oracle(self, case):
        rng = np.random.default_rng(100 + case["in_c"])
        hw = case.pop("hw")
        layer, conv, bn = rand_fused_layer(rng, **case)
        signs = rand_signs(rng, (2, hw, hw, case["in_c"]))
        got = fused_binary_conv(pack_channels(signs), layer)
        want = oracle_fused_bits(signs, conv, bn)
        assert np.array_equal(unpack_bit_array(got.data, got.shape.c), want)

    @pytest.mark.parametrize("gamma_sign", [1, -1])
    def test_constructed_tie_hits_rule(self, gamma_sign):
        # acc == threshold must produce bit 1 for either gamma sign
        rng = np.random.default_rng(55)
        in_c = 8
        signs = rand_signs(rng, (1, 1, 1, in_c))
        wsigns = rand_signs(rng, (3, 1, 1, in_c))
        geo = ConvGeometry(1, 1, 1, 1, 0, 0, in_c, 3)
        acc = oracle_conv(signs, wsigns, geo)[0, 0, 0]
        layer, conv, bn = tie_layer(rng, in_c, 3, acc_value=float(acc[0]),
                                    gamma_sign=gamma_sign)
        layer.weights = pack_channels(wsigns)
        conv.weights = wsigns
        got = fused_binary_conv(pack_channels(signs), layer)
        want = oracle_fused_bits(signs, conv, bn)
        bits = unpack_bit_array(got.data, 3)
        assert np.array_equal(bits, want)
        assert bits[0, 0, 0, 0] == 1  # the tie channel

    def test_border_cells_contribute_nothing(self):
        # A padded window must equal the oracle that pads with literal zeros.
        rng = np.random.default_rng(31)
        layer, conv, bn = rand_fused_layer(rng, 6, 4, kernel=3, stride=1, pad=1)
        signs = rand_signs(rng, (1, 3, 3, 6))
        got = fused_binary_conv(pack_channels(signs), layer)
        want = oracle_fused_bits(signs, conv, bn)
        assert np.array_equal(unpack_bit_array(got.data, 4), want)

    def test_thread_counts_agree(self):
        rng = np.random.default_rng(77)
        layer, _, _ = rand_fused_layer(rng, 32, 24, kernel=3, stride=1, pad=1)
        signs = rand_signs(rng, (1, 13, 11, 32))
        packed = pack_channels(signs)
        ref = fused_binary_conv(packed, layer, threads=1)
        for threads in (2, 3, 8):
            assert fused_binary_conv(packed, layer, threads=threads) == ref

    def test_channel_mismatch_raises(self):
        rng = np.random.default_rng(1)
        layer, _, _ = rand_fused_layer(rng, 8, 4)
        with pytest.raises(DimensionError):
            fused_binary_conv(pack_channels(rand_signs(rng, (1, 4, 4, 16))), layer)


class TestSchedule:
    def test_small_channel_count_integrates(self):
        rng = np.random.default_rng(2)
        layer, _, _ = rand_fused_layer(rng, 128, 8, kernel=1, pad=0)
        assert schedule_conv(layer).pack_integrated

    def test_large_channel_count_packs_separately(self):
        rng = np.random.default_rng(3)
        layer, _, _ = rand_fused_layer(rng, 512, 8, kernel=1, pad=0)
        assert not schedule_conv(layer).pack_integrated

    def test_threshold_is_configurable(self):
        rng = np.random.default_rng(4)
        layer, _, _ = rand_fused_layer(rng, 512, 8, kernel=1, pad=0)
        assert schedule_conv(layer, integrate_threshold=512).pack_integrated

    def test_plans_produce_identical_words(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            in_c = int(rng.integers(1, 80))
            out_c = int(rng.integers(1, 40))
            layer, _, _ = rand_fused_layer(rng, in_c, out_c, kernel=3, pad=1)
            signs = rand_signs(rng, (1, 5, 5, in_c))
            packed = pack_channels(signs)
            geo = layer.geometry
            col = _im2col_words(packed.data[0], 3, 3, 1, 1, 1, 1)
            wmat = layer.weights.data.reshape(out_c, -1)
            border = _window_base(geo, 5, 5, layer.weights)
            args = (col, wmat, border, layer.threshold, layer.gamma_positive,
                    out_c, 64, 1)
            assert np.array_equal(_conv_words_integrated(*args),
                                  _conv_words_separate(*args))


class TestFirstLayer:
    def make_layer(self, rng, in_c, out_c, kernel=3, stride=1, pad=1,
                   thresholds=None):
        geo = ConvGeometry(kernel, kernel, stride, stride, pad, pad, in_c, out_c)
        wsigns = rand_signs(rng, (out_c, kernel, kernel, in_c))
        thr = (np.zeros(out_c) if thresholds is None
               else np.asarray(thresholds, np.float64))
        params = LayerParams(bias=np.zeros(out_c, np.float32),
                             gamma=np.ones(out_c, np.float32),
                             beta=np.zeros(out_c, np.float32),
                             mean=thr.astype(np.float32),
                             std=np.ones(out_c, np.float32))
        layer = FirstConvLayer(geometry=geo, weights=pack_channels(wsigns),
                               threshold=thr, gamma_positive=params.gamma > 0,
                               params=params)
        return layer, wsigns

    def int_conv_oracle(self, img, wsigns, geo):
        return oracle_conv(img.data.astype(np.float64), wsigns, geo).astype(np.int64)

    def test_zero_image_gives_zero_acc(self):
        rng = np.random.default_rng(8)
        layer, wsigns = self.make_layer(rng, 3, 4)
        img = ByteTensor(Shape(1, 5, 5, 3), np.zeros((1, 5, 5, 3), np.uint8))
        acc = first_layer_acc(img, layer.weights, layer.geometry)
        assert not acc.any()
        bits = first_layer_conv(img, layer)
        # acc 0 >= threshold 0 with positive gamma -> every bit set
        assert np.array_equal(unpack_bit_array(bits.data, 4),
                              np.ones((1, 5, 5, 4), np.uint8))

    def test_single_pixel_value_is_identity(self):
        rng = np.random.default_rng(9)
        geo = ConvGeometry(1, 1, 1, 1, 0, 0, 1, 1)
        w = np.ones((1, 1, 1, 1), np.int8)
        img = ByteTensor(Shape(1, 1, 1, 1), np.full((1, 1, 1, 1), 166, np.uint8))
        acc = first_layer_acc(img, pack_channels(w), geo)
        assert acc[0, 0, 0, 0] == 166

    def test_random_images_match_integer_conv(self):
        rng = np.random.default_rng(10)
        for _ in range(8):
            in_c = int(rng.integers(1, 5))
            out_c = int(rng.integers(1, 7))
            layer, wsigns = self.make_layer(rng, in_c, out_c)
            data = rng.integers(0, 256, (1, 8, 8, in_c), dtype=np.uint8)
            img = ByteTensor(Shape(1, 8, 8, in_c), data)
            acc = first_layer_acc(img, layer.weights, layer.geometry)
            assert np.array_equal(acc, self.int_conv_oracle(img, wsigns, layer.geometry))

    def test_binarization_follows_threshold_rule(self):
        rng = np.random.default_rng(11)
        layer, wsigns = self.make_layer(rng, 3, 5, thresholds=rng.normal(0, 40, 5))
        data = rng.integers(0, 256, (1, 6, 6, 3), dtype=np.uint8)
        img = ByteTensor(Shape(1, 6, 6, 3), data)
        acc = self.int_conv_oracle(img, wsigns, layer.geometry)
        want = threshold_sign_bits(acc, layer.threshold, layer.gamma_positive)
        got = first_layer_conv(img, layer)
        assert np.array_equal(unpack_bit_array(got.data, 5).astype(bool), want)


class TestMaxPool:
    def unpack_pool_oracle(self, t, pool):
        """Unpack, numeric max over clipped windows, repack."""
        signs = unpack_channels(t).astype(np.int64)
        n, h, w, c = signs.shape
        oh, ow = pool.out_size(h, w)
        out = np.empty((n, oh, ow, c), np.int64)
        for i in range(oh):
            for j in range(ow):
                hs, ws = i * pool.stride_h, j * pool.stride_w
                win = signs[:, hs:min(hs + pool.window_h, h),
                            ws:min(ws + pool.window_w, w)]
                out[:, i, j] = win.max(axis=(1, 2))
        return out

    def test_all_zero_window_stays_zero(self):
        signs = -np.ones((1, 2, 2, 8), np.int8)
        t = binary_maxpool(pack_channels(signs), PoolGeometry(2, 2, 2, 2))
        assert not t.data.any()

    def test_single_one_dominates(self):
        signs = -np.ones((1, 2, 2, 8), np.int8)
        signs[0, 1, 0, 3] = 1
        t = binary_maxpool(pack_channels(signs), PoolGeometry(2, 2, 2, 2))
        assert unpack_channels(t)[0, 0, 0, 3] == 1

    def test_window_bits_0100_pools_to_one(self):
        signs = np.array([-1, 1, -1, -1], np.int8).reshape(1, 2, 2, 1)
        t = binary_maxpool(pack_channels(signs), PoolGeometry(2, 2, 2, 2))
        assert unpack_channels(t)[0, 0, 0, 0] == 1

    @pytest.mark.parametrize("pool", [PoolGeometry(2, 2, 2, 2), PoolGeometry(2, 2, 1, 1),
                                      PoolGeometry(3, 2, 2, 3)])
    def test_matches_unpack_max_repack(self, pool):
        rng = np.random.default_rng(13)
        for _ in range(6):
            h, w, c = (int(v) for v in rng.integers(1, 8, 3))
            signs = rand_signs(rng, (2, h, w, c))
            got = binary_maxpool(pack_channels(signs), pool)
            assert np.array_equal(unpack_channels(got), self.unpack_pool_oracle(
                pack_channels(signs), pool))


class TestDense:
    def make_dense(self, rng, in_features, units, thresholds, gamma_positive=True):
        geo = ConvGeometry(1, 1, 1, 1, 0, 0, in_features, units)
        wsigns = rand_signs(rng, (units, 1, 1, in_features))
        g = np.float32(1.0 if gamma_positive else -1.0)
        params = LayerParams(bias=np.zeros(units, np.float32),
                             gamma=np.full(units, g, np.float32),
                             beta=np.zeros(units, np.float32),
                             mean=np.asarray(thresholds, np.float32),
                             std=np.ones(units, np.float32))
        layer = pack_layer_from_arrays(geo, wsigns, params.bias, params.gamma,
                                       params.beta, params.mean, params.std)
        layer.pack_integrated = schedule_conv(layer).pack_integrated
        return layer, wsigns

    def test_matching_row_fires(self):
        rng = np.random.default_rng(14)
        L = 40
        layer, wsigns = self.make_dense(rng, L, 1, thresholds=[L - 1])
        inp = pack_channels(wsigns[0].reshape(1, 1, 1, L))
        out = binary_dense(inp, layer)
        assert unpack_bit_array(out.data, 1)[0, 0, 0, 0] == 1

    def test_complement_row_does_not_fire(self):
        rng = np.random.default_rng(15)
        L = 40
        layer, wsigns = self.make_dense(rng, L, 1, thresholds=[-L + 1])
        inp = pack_channels((-wsigns[0]).reshape(1, 1, 1, L))
        out = binary_dense(inp, layer)
        assert unpack_bit_array(out.data, 1)[0, 0, 0, 0] == 0

    def test_random_rows_match_oracle_pipeline(self):
        rng = np.random.default_rng(16)
        layer, conv, bn = rand_fused_layer(rng, 512, 24, kernel=1, pad=0)
        signs = rand_signs(rng, (1, 4, 8, 16))  # flattens to 512
        flat = signs.reshape(1, 1, 1, 512)
        got = binary_dense(pack_channels(signs), layer)
        want = oracle_fused_bits(flat, conv, bn)
        assert np.array_equal(unpack_bit_array(got.data, 24), want)

    def test_row_length_mismatch_raises(self):
        rng = np.random.default_rng(17)
        layer, _ = self.make_dense(rng, 64, 2, thresholds=[0, 0])
        with pytest.raises(DimensionError):
            binary_dense(pack_channels(rand_signs(rng, (1, 2, 2, 8))), layer)

    def test_flatten_preserves_bit_order(self):
        rng = np.random.default_rng(18)
        signs = rand_signs(rng, (2, 3, 4, 5))
        flat = flatten_bits(pack_channels(signs))
        assert np.array_equal(unpack_channels(flat),
                              signs.reshape(2, 1, 1, 60))


class TestOutputConv:
    def make_output(self, rng, in_c, out_c, bias=None, bn=None, kernel=1, pad=0):
        geo = ConvGeometry(kernel, kernel, 1, 1, pad, pad, in_c, out_c)
        wsigns = rand_signs(rng, (out_c, kernel, kernel, in_c))
        layer = OutputConvLayer(
            geometry=geo, weights=pack_channels(wsigns),
            bias=np.zeros(out_c, np.float32) if bias is None else np.asarray(bias, np.float32),
            bn=bn)
        return layer, wsigns

    def test_no_bias_no_bn_equals_binary_dot(self):
        rng = np.random.default_rng(19)
        layer, wsigns = self.make_output(rng, 24, 3)
        signs = rand_signs(rng, (1, 4, 4, 24))
        out = output_conv(pack_channels(signs), layer)
        for i in range(4):
            for j in range(4):
                a = pack_channels(signs[:, i:i + 1, j:j + 1]).data.reshape(-1)
                for oc in range(3):
                    b = layer.weights.data[oc].reshape(-1)
                    want = binary_dot(PackedVectorView(a, 24), PackedVectorView(b, 24))
                    assert out.data[0, i, j, oc] == want

    def test_bias_only_case(self):
        # acc = 2 from a 4-channel dot with three matches, then +0.5
        signs = np.array([1, 1, 1, -1], np.int8).reshape(1, 1, 1, 4)
        w = np.array([1, 1, 1, 1], np.int8).reshape(1, 1, 1, 4)
        geo = ConvGeometry(1, 1, 1, 1, 0, 0, 4, 1)
        layer = OutputConvLayer(geometry=geo, weights=pack_channels(w),
                                bias=np.array([0.5], np.float32),
                                bn=BatchNormParams(np.array([1.0], np.float32),
                                                   np.array([0.0], np.float32),
                                                   np.array([0.0], np.float32),
                                                   np.array([1.0], np.float32)))
        out = output_conv(pack_channels(signs), layer)
        assert out.data[0, 0, 0, 0] == pytest.approx(2.5)

    def test_full_bn_case(self):
        # acc = 4, bias 0.5 -> x2 = 4.5; 0.5*(4.5-0.5)/2 + 1 = 2.0
        signs = np.ones((1, 1, 1, 4), np.int8)
        w = np.ones((1, 1, 1, 4), np.int8)
        geo = ConvGeometry(1, 1, 1, 1, 0, 0, 4, 1)
        layer = OutputConvLayer(geometry=geo, weights=pack_channels(w),
                                bias=np.array([0.5], np.float32),
                                bn=BatchNormParams(np.array([0.5], np.float32),
                                                   np.array([1.0], np.float32),
                                                   np.array([0.5], np.float32),
                                                   np.array([2.0], np.float32)))
        out = output_conv(pack_channels(signs), layer)
        assert out.data[0, 0, 0, 0] == pytest.approx(2.0)

    def test_nonpositive_std_rejected(self):
        with pytest.raises(InvalidParameterError):
            BatchNormParams(np.array([1.0], np.float32), np.array([0.0], np.float32),
                            np.array([0.0], np.float32), np.array([0.0], np.float32))

    def test_padded_output_conv_matches_oracle(self):
        rng = np.random.default_rng(20)
        layer, wsigns = self.make_output(rng, 6, 4, bias=rng.normal(0, 1, 4),
                                         kernel=3, pad=1)
        signs = rand_signs(rng, (1, 5, 5, 6))
        out = output_conv(pack_channels(signs), layer)
        want = oracle_conv(signs, wsigns, layer.geometry) + layer.bias.astype(np.float64)
        assert np.array_equal(out.data, want)
