import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsett import Tape, Tensor, backward
from sparsett.boxes import BBox
from sparsett.errors import ConfigError, InputError
from sparsett.labels import GridGeometry
from sparsett.losses import combined_loss, focal_loss, iou_loss
from sparsett.model import (BackboneStem, ModelConfig, PredictionMaps, SparseTT, cosine_window, fuse_and_select,
                            fused_scores, micro_config)
from sparsett.tensor import _sigmoid


@pytest.fixture(scope="module")
def micro():
    model = SparseTT(micro_config(), seed=3)
    model.eval()
    return model


def maps_from(cls_fc, cls_conv, box_fc, box_conv):
    return PredictionMaps(*(Tensor(np.asarray(a, dtype=float)[None]) for a in (cls_fc, cls_conv, box_fc, box_conv)))


class TestBackbone:
    @pytest.mark.parametrize("size,cells", [(127, 16), (289, 37), (63, 8), (129, 17)])
    def test_feature_extent(self, size, cells):
        cfg = ModelConfig(channels=8, heads=2, stem_channels=(2, 2, 2))
        stem = BackboneStem(cfg, np.random.default_rng(0))
        out = stem(Tensor(np.zeros((1, 3, size, size))))
        assert out.shape == (1, 8, cells, cells)

    def test_branches_share_weights(self, micro, rng):
        crop = rng.uniform(0, 1, (3, 25, 25))
        np.testing.assert_array_equal(micro.extract_features(crop).data, micro.extract_features(crop.copy()).data)

    def test_wrong_crop_size(self, micro):
        with pytest.raises(InputError):
            micro.extract_features(np.zeros((3, 30, 30)))

    def test_token_layout(self, micro, rng):
        tokens = micro.extract_features(rng.uniform(0, 1, (3, 41, 41)))
        assert tokens.shape == (1, 36, 16)


class TestConfig:
    def test_rejects_bad_fusion(self):
        with pytest.raises(ConfigError):
            ModelConfig(fusion="max")

    def test_full_sparseness_means_all_tokens(self):
        cfg = micro_config(sparseness=0)
        assert cfg.effective_sparseness == 36


class TestHeads:
    def test_map_shapes_and_positivity(self, micro, rng):
        maps = micro(rng.uniform(0, 1, (2, 3, 25, 25)), rng.uniform(0, 1, (2, 3, 41, 41)))
        assert maps.cls_fc.shape == maps.cls_conv.shape == (2, 6, 6)
        assert maps.box_fc.shape == maps.box_conv.shape == (2, 4, 6, 6)
        assert (maps.box_fc.data > 0).all() and (maps.box_conv.data > 0).all()
        s = _sigmoid(maps.cls_fc.data)
        assert ((s >= 0) & (s <= 1)).all()

    def test_conv_tower_does_not_touch_fc_head(self, rng):
        model = SparseTT(micro_config(), seed=1)
        tokens = model.focus.decode(model.extract_features(rng.uniform(0, 1, (3, 41, 41))),
                                    model.encode_template(rng.uniform(0, 1, (3, 25, 25))))
        before = model.predict(tokens)
        for block in model.head.tower:
            for _, p in block.named_parameters():
                p.data[:] = 0
        after = model.predict(tokens)
        np.testing.assert_array_equal(before.cls_fc.data, after.cls_fc.data)
        np.testing.assert_array_equal(before.box_fc.data, after.box_fc.data)

    def test_classifier_prior(self):
        model = SparseTT(micro_config(), seed=0)
        np.testing.assert_allclose(model.head.fc_cls.bias.data, -np.log(99))

    def test_gradients_reach_every_stage(self, rng):
        model = SparseTT(micro_config(), seed=2)
        model.train()
        labels = np.zeros((1, 6, 6))
        labels[0, 2:4, 2:4] = 1
        targets = rng.uniform(1, 3, (1, 4, 6, 6))
        with Tape():
            m = model(rng.uniform(0, 1, (1, 3, 25, 25)), rng.uniform(0, 1, (1, 3, 41, 41)))
            loss = combined_loss(focal_loss(m.cls_fc, labels), iou_loss(m.box_fc, targets, labels > 0),
                                 focal_loss(m.cls_conv, labels), iou_loss(m.box_conv, targets, labels > 0))
        backward(loss)
        grads = {name: np.abs(p.grad).sum() if p.grad is not None else 0.0 for name, p in model.named_parameters()}
        for prefix in ("backbone.conv1", "focus.encoder.0", "focus.decoder.0.self_attn", "focus.decoder.0.cross_attn",
                       "head.fc1", "head.tower.0", "head.conv_box"):
            assert sum(v for k, v in grads.items() if k.startswith(prefix)) > 0, prefix


class TestFusion:
    def test_equal_heads_fuse_to_either(self, rng):
        z = rng.normal(size=(3, 3))
        box = np.ones((4, 3, 3))
        np.testing.assert_allclose(fused_scores(maps_from(z, z, box, box))[0], _sigmoid(z))

    def test_or_fusion(self):
        m = maps_from(np.zeros((1, 1)), np.zeros((1, 1)), np.ones((4, 1, 1)), np.ones((4, 1, 1)))
        assert fused_scores(m, "or")[0, 0, 0] == 0.75

    def test_decoding_identity(self):
        geo = GridGeometry(41, 6)
        cls = np.full((6, 6), -50.0)
        cls[2, 4] = 50.0
        box = np.ones((4, 6, 6))
        sel = fuse_and_select(maps_from(cls, cls, box * 0.3, box), geo)
        c = geo.centers()
        assert sel.location == (2, 4)
        assert sel.box == BBox(c[4] - 8, c[2] - 8, c[4] + 8, c[2] + 8)

    def test_row_major_tie_break(self):
        cls = np.zeros((4, 4))
        sel = fuse_and_select(maps_from(cls, cls, np.ones((4, 4, 4)), np.ones((4, 4, 4))), GridGeometry(25, 4))
        assert sel.location == (0, 0)

    def test_window_favours_centre_on_ties(self):
        cls = np.zeros((5, 5))
        ones = np.ones((4, 5, 5))
        sel = fuse_and_select(maps_from(cls, cls, ones, ones), GridGeometry(33, 5), window_influence=0.3)
        assert sel.location == (2, 2)
        np.testing.assert_allclose(cosine_window(5)[2, 2], 1.0)

    @given(st.integers(0, 2 ** 31))
    def test_box_fc_never_changes_selection(self, seed):
        rng = np.random.default_rng(seed)
        cls_fc, cls_conv = rng.normal(size=(2, 5, 5))
        box_conv = rng.uniform(0.2, 3, (4, 5, 5))
        geo = GridGeometry(33, 5)
        ref = fuse_and_select(maps_from(cls_fc, cls_conv, rng.uniform(0.2, 3, (4, 5, 5)), box_conv), geo, "mean", 0.3)
        other = fuse_and_select(maps_from(cls_fc, cls_conv, rng.uniform(0, 100, (4, 5, 5)), box_conv), geo, "mean", 0.3)
        assert ref.box == other.box and ref.location == other.location

    @given(st.integers(0, 2 ** 31), st.floats(0.1, 10))
    def test_logit_scaling_keeps_argmax_when_heads_agree(self, seed, c):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(5, 5))
        conv = 2.0 * z + 0.5  # ranks locations the same way as z
        box = np.ones((4, 5, 5))
        geo = GridGeometry(33, 5)
        a = fuse_and_select(maps_from(z, conv, box, box), geo)
        b = fuse_and_select(maps_from(c * z, c * conv, box, box), geo)
        assert a.location == b.location
