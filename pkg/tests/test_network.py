import numpy as np
import pytest

from hemascreen import network
from hemascreen.network import (
    DwSepConv,
    Downsample,
    NetSpec,
    SigmoidHead,
    SkipConcat,
    Upsample,
)


def direct_dwsep(x, dw, pw, bias, stride, dilation):
    """Nested-loop depthwise + pointwise convolution oracle."""
    c, h, w = x.shape
    k = dw.shape[1]
    pad = dilation * (k - 1) // 2
    span = dilation * (k - 1) + 1
    oh = (h + 2 * pad - span) // stride + 1
    ow = (w + 2 * pad - span) // stride + 1
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad))
    xp[:, pad : pad + h, pad : pad + w] = x
    stage = np.zeros((c, oh, ow))
    for ch in range(c):
        for oy in range(oh):
            for ox in range(ow):
                acc = 0.0
                for i in range(k):
                    for j in range(k):
                        acc += dw[ch, i, j] * xp[ch, oy * stride + i * dilation,
                                                 ox * stride + j * dilation]
                stage[ch, oy, ox] = acc
    out = np.zeros((pw.shape[0], oh, ow))
    for oc in range(pw.shape[0]):
        for oy in range(oh):
            for ox in range(ow):
                out[oc, oy, ox] = sum(pw[oc, ch] * stage[ch, oy, ox] for ch in range(c)) + bias[oc]
    return out


def identity_net(channels=1, size=8):
    dw = np.zeros((channels, 3, 3))
    dw[:, 1, 1] = 1.0
    layer = DwSepConv(channels, channels, 3,
                      depthwise=dw, pointwise=np.eye(channels), bias=np.zeros(channels))
    return layer


class TestDwSepConv:
    def test_identity_kernels_preserve_input(self):
        rng = np.random.default_rng(31)
        x = rng.normal(size=(3, 8, 8))
        dw = np.zeros((3, 3, 3))
        dw[:, 1, 1] = 1.0
        out = network.dwsep_conv2d(x, dw, np.eye(3), np.zeros(3))
        assert np.allclose(out, x, atol=1e-12)

    @pytest.mark.parametrize("stride,dilation", [(1, 1), (2, 1), (1, 2), (2, 2)])
    def test_matches_direct_convolution_oracle(self, stride, dilation):
        rng = np.random.default_rng(32 + stride * 10 + dilation)
        for _ in range(5):
            c = int(rng.integers(1, 5))
            oc = int(rng.integers(1, 5))
            h, w = (int(v) for v in rng.integers(5, 17, size=2))
            k = int(rng.choice([1, 3, 5]))
            x = rng.normal(size=(c, h, w))
            dw = rng.normal(size=(c, k, k))
            pw = rng.normal(size=(oc, c))
            bias = rng.normal(size=oc)
            got = network.dwsep_conv2d(x, dw, pw, bias, stride=stride, dilation=dilation)
            want = direct_dwsep(x, dw, pw, bias, stride, dilation)
            assert got.shape == want.shape
            assert np.abs(got - want).max() < 1e-6

    def test_dilation_two_preserves_spatial_size(self):
        x = np.zeros((2, 9, 11))
        dw = np.zeros((2, 3, 3))
        out = network.dwsep_conv2d(x, dw, np.eye(2), np.zeros(2), stride=1, dilation=2)
        assert out.shape == (2, 9, 11)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            network.dwsep_conv2d(np.zeros((3, 4, 4)), np.zeros((2, 3, 3)), np.eye(2))


class TestForward:
    def test_zero_weights_give_half_map(self):
        net = network.default_netspec((3, 16, 16))
        for layer in net.layers:
            if isinstance(layer, DwSepConv):
                layer.depthwise = np.zeros((layer.in_channels, 3, 3))
                layer.pointwise = np.zeros((layer.out_channels, layer.in_channels))
                layer.bias = np.zeros(layer.out_channels)
        out = network.forward(net, np.random.default_rng(33).normal(size=(3, 16, 16)))
        assert out.shape == (16, 16)
        assert np.all(out == 0.5)

    def test_identity_conv_reproduced_under_logit(self):
        net = NetSpec((1, 8, 8), [identity_net(), SigmoidHead()])
        x = np.random.default_rng(34).normal(size=(1, 8, 8))
        out = network.forward(net, x)
        assert np.allclose(np.log(out / (1 - out)), x[0], atol=1e-9)

    def test_deterministic_runs(self):
        net = network.init_weights(network.default_netspec((3, 16, 16)), seed=5)
        x = np.random.default_rng(35).normal(size=(3, 16, 16))
        assert np.array_equal(network.forward(net, x), network.forward(net, x))

    def test_output_in_open_unit_interval(self):
        net = network.init_weights(network.default_netspec((3, 16, 16)), seed=6)
        out = network.forward(net, np.random.default_rng(36).normal(size=(3, 16, 16)))
        assert out.min() > 0.0 and out.max() < 1.0

    def test_spatial_dims_preserved_end_to_end(self):
        for size in (16, 24, 32):
            net = network.init_weights(network.default_netspec((3, size, size)), seed=7)
            out = network.forward(net, np.zeros((3, size, size)))
            assert out.shape == (size, size)

    def test_shape_violation_names_layer(self):
        net = NetSpec((3, 15, 15), [DwSepConv(3, 4, 3), Downsample(), SigmoidHead()])
        network.init_weights(net, seed=8)
        with pytest.raises(network.NetShapeError) as err:
            network.forward(net, np.zeros((3, 15, 15)))
        assert err.value.layer_index == 1

    def test_wrong_input_shape_rejected(self):
        net = network.init_weights(network.default_netspec((3, 16, 16)), seed=9)
        with pytest.raises(ValueError):
            network.forward(net, np.zeros((3, 8, 8)))


class TestBottleneck:
    def test_vector_length_is_flattened_shape(self):
        net = network.init_weights(network.default_netspec((3, 16, 16), base=4), seed=10)
        vec = network.bottleneck_vector(net, np.zeros((3, 16, 16)))
        # bottleneck layer: 8 channels at 8x8 after one downsample
        assert vec.shape == (8 * 8 * 8,)

    def test_zero_weights_give_zero_vector(self):
        net = network.default_netspec((3, 16, 16))
        for layer in net.layers:
            if isinstance(layer, DwSepConv):
                layer.depthwise = np.zeros((layer.in_channels, 3, 3))
                layer.pointwise = np.zeros((layer.out_channels, layer.in_channels))
                layer.bias = np.zeros(layer.out_channels)
        vec = network.bottleneck_vector(net, np.ones((3, 16, 16)))
        assert np.all(vec == 0.0)

    def test_identical_inputs_identical_vectors(self):
        net = network.init_weights(network.default_netspec((3, 16, 16)), seed=11)
        x = np.random.default_rng(37).normal(size=(3, 16, 16))
        assert np.array_equal(network.bottleneck_vector(net, x),
                              network.bottleneck_vector(net, x))

    def test_missing_flag_rejected(self):
        net = network.init_weights(network.default_netspec((3, 16, 16)), seed=12)
        net.bottleneck_index = None
        with pytest.raises(ValueError, match="bottleneck"):
            network.bottleneck_vector(net, np.zeros((3, 16, 16)))


class TestSerialization:
    def test_round_trip_preserves_outputs(self, tmp_path):
        net = network.init_weights(network.default_netspec((3, 16, 16)), seed=13)
        x = np.random.default_rng(38).normal(size=(3, 16, 16))
        before = network.forward(net, x)
        path = tmp_path / "model.pnet"
        network.save_netspec(net, path)
        loaded = network.load_netspec(path)
        after = network.forward(loaded, x)
        # weights persist as f32, so outputs agree to f32 precision
        assert np.abs(before - after).max() < 1e-5

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pnet"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            network.load_netspec(path)

    def test_invalid_chain_rejected_at_load(self, tmp_path):
        net = NetSpec((3, 16, 16), [DwSepConv(3, 4, 3), SkipConcat(0), SigmoidHead()])
        network.init_weights(net, seed=14)
        path = tmp_path / "broken.pnet"
        # bypass save-side validation to prove the loader checks the chain
        orig = NetSpec.validate
        NetSpec.validate = lambda self: None
        try:
            network.save_netspec(net, path)
        finally:
            NetSpec.validate = orig
        with pytest.raises(network.NetShapeError):
            network.load_netspec(path)
