import numpy as np
import pytest

from sparsett import Tape, Tensor, backward
from sparsett.attention import AttentionConfig
from sparsett.errors import ConfigError, DimensionError
from sparsett.focusnet import FocusNetConfig, TargetFocusNet, position_encoding


def small_cfg(n=1, m=1, k=4, **kw):
    att = AttentionConfig(8, heads=2, sparseness=k, dropout=0.0)
    return FocusNetConfig(n, m, att, ffn_hidden=12, template_hw=(2, 2), search_hw=(3, 3), **kw)


class TestPositionEncoding:
    def test_origin_row(self):
        row = position_encoding(3, 3, 16).grid.data[0]
        assert (row[0::2] == 0).all() and (row[1::2] == 1).all()

    def test_rows_are_distinct(self):
        for h, w in [(1, 64), (64, 1), (16, 16), (37, 37), (64, 64)]:
            g = position_encoding(h, w, 64).grid.data
            assert len(np.unique(g, axis=0)) == h * w

    def test_row_major_layout(self):
        g = position_encoding(4, 5, 8).grid.data
        x_half, y_half = g[:, :4], g[:, 4:]
        p = 2 * 5 + 3  # (y=2, x=3)
        np.testing.assert_array_equal(x_half[p], position_encoding(1, 5, 8).grid.data[3, :4])
        np.testing.assert_array_equal(y_half[p], position_encoding(4, 1, 8).grid.data[2, 4:])

    def test_channels_divisible_by_four(self):
        with pytest.raises(ConfigError):
            position_encoding(2, 2, 6)

    def test_deterministic(self):
        np.testing.assert_array_equal(position_encoding(5, 4, 12).grid.data, position_encoding(5, 4, 12).grid.data)


class TestConfig:
    def test_zero_encoders_allowed(self):
        assert small_cfg(n=0).encoder_layers == 0

    def test_decoder_required(self):
        with pytest.raises(ConfigError):
            small_cfg(m=0)


class TestEncoder:
    def test_zero_layers_is_identity(self, rng):
        net = TargetFocusNet(small_cfg(n=0), rng)
        z = Tensor(rng.normal(size=(4, 8)))
        assert net.encode(z) is z

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_shape(self, rng, n):
        net = TargetFocusNet(small_cfg(n=n), rng)
        assert net.encode(Tensor(rng.normal(size=(4, 8)))).shape == (4, 8)

    def test_zeroed_residual_branches_reduce_to_norms(self, rng):
        net = TargetFocusNet(small_cfg(n=2), rng)
        for layer in net.encoder:
            layer.self_attn.out_proj.weight.data[:] = 0
            layer.self_attn.out_proj.bias.data[:] = 0
            layer.ffn.fc2.weight.data[:] = 0
            layer.ffn.fc2.bias.data[:] = 0
        z = rng.normal(size=(4, 8))
        y = Tensor(z + net.pos_enc)
        for layer in net.encoder:
            y = layer.norm2(layer.norm1(y))
        np.testing.assert_allclose(net.encode(Tensor(z)).data, y.data, atol=1e-12)

    def test_wrong_shape(self, rng):
        with pytest.raises(DimensionError):
            TargetFocusNet(small_cfg(), rng).encode(Tensor(np.zeros((5, 8))))


class TestDecoder:
    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_shape(self, rng, m):
        net = TargetFocusNet(small_cfg(m=m), rng)
        out = net(Tensor(rng.normal(size=(2, 4, 8))), Tensor(rng.normal(size=(2, 9, 8))))
        assert out.shape == (2, 9, 8)

    def test_every_layer_sees_same_memory(self, rng, monkeypatch):
        net = TargetFocusNet(small_cfg(m=3), rng)
        seen = []
        for layer in net.decoder:
            original = layer.cross_attn.forward

            def spy(q, k=None, v=None, *a, original=original, **kw):
                seen.append(k)
                return original(q, k, v, *a, **kw)

            monkeypatch.setattr(layer.cross_attn, "forward", spy)
        memory = net.encode(Tensor(rng.normal(size=(4, 8))))
        net.decode(Tensor(rng.normal(size=(9, 8))), memory)
        assert len(seen) == 3 and all(m is memory for m in seen)

    def test_gradients_reach_both_inputs(self, rng):
        net = TargetFocusNet(small_cfg(n=1, m=2), rng)
        z = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
        x = Tensor(rng.normal(size=(9, 8)), requires_grad=True)
        with Tape():
            loss = (net(z, x) * Tensor(rng.normal(size=(9, 8)))).sum()
        backward(loss)
        assert np.abs(z.grad).sum() > 0 and np.abs(x.grad).sum() > 0

    def test_disabling_cross_attention_removes_memory_dependence(self, rng, monkeypatch):
        net = TargetFocusNet(small_cfg(m=2), rng)
        for layer in net.decoder:
            monkeypatch.setattr(layer.cross_attn, "forward", lambda q, *a, **kw: q * 0.0)
        x = Tensor(rng.normal(size=(9, 8)))
        a = net.decode(x, Tensor(rng.normal(size=(4, 8)))).data
        b = net.decode(x, Tensor(rng.normal(size=(4, 8)))).data
        np.testing.assert_array_equal(a, b)

    def test_full_k_equals_dense_focus_net(self, rng):
        sparse = TargetFocusNet(small_cfg(n=1, m=2, k=9), np.random.default_rng(2))
        dense = TargetFocusNet(small_cfg(n=1, m=2, k=9), np.random.default_rng(2))
        for layer in dense.decoder:
            layer.self_attn.sparse = False
        z, x = Tensor(rng.normal(size=(4, 8))), Tensor(rng.normal(size=(9, 8)))
        np.testing.assert_allclose(sparse(z, x).data, dense(z, x).data, atol=1e-8)

    def test_eval_determinism(self, rng):
        net = TargetFocusNet(small_cfg(), np.random.default_rng(4))
        net.eval()
        z, x = Tensor(rng.normal(size=(4, 8))), Tensor(rng.normal(size=(9, 8)))
        np.testing.assert_array_equal(net(z, x).data, net(z, x).data)
