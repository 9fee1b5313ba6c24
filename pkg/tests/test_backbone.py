import numpy as np
import pytest
import torch

from oracles import gradient_check, spatial_mean_bruteforce
from rvoslite.attention import randomize_parameters
from rvoslite.backbone import (ConvBackbone, FeatureProjector, ModelDims,
                               TextEmbedder, embed_text, extract_visual_features,
                               project_and_pool)


class TestConvBackbone:
    def test_level_shapes(self):
        bb = ConvBackbone((16, 16, 16))
        feats = bb(torch.rand(3, 32, 32, 3, dtype=torch.float64))
        assert [tuple(l.shape) for l in feats.levels] == [
            (3, 8, 8, 16), (3, 4, 4, 16), (3, 2, 2, 16)]
        assert feats.level_strides == [4, 8, 16]

    def test_ceil_shapes_for_odd_sizes(self):
        bb = ConvBackbone((4, 4, 4))
        feats = bb(torch.rand(2, 30, 19, 3, dtype=torch.float64))
        assert [tuple(l.shape[1:3]) for l in feats.levels] == [
            (8, 5), (4, 3), (2, 2)]  # ceil(30/4)=8, ceil(30/8)=4, ceil(30/16)=2

    def test_zero_input_gives_constant_bias_response(self):
        bb = ConvBackbone((8, 8, 8))
        feats = bb(torch.zeros(4, 32, 32, 3, dtype=torch.float64))
        for level in feats.levels:
            assert torch.equal(level[0], level[1])
            assert torch.equal(level[0], level[3])
            # constant over space too: zero input + bias is translation invariant
            flat = level[0].reshape(-1, level.shape[-1])
            assert torch.allclose(flat, flat[0].expand_as(flat))

    def test_frame_permutation_equivariance(self):
        bb = ConvBackbone((8, 8, 8))
        x = torch.rand(5, 32, 32, 3, dtype=torch.float64)
        perm = torch.tensor([3, 0, 4, 1, 2])
        direct = bb(x[perm]).levels[0]
        permuted = bb(x).levels[0][perm]
        assert torch.equal(direct, permuted)

    def test_mask_input_lifted_to_three_channels(self):
        bb = ConvBackbone((8, 8, 8))
        mask = torch.randint(0, 2, (2, 32, 32)).to(torch.float64)
        via_mask = bb(mask)
        via_rgb = bb(mask[..., None].expand(-1, -1, -1, 3))
        assert torch.equal(via_mask.levels[0], via_rgb.levels[0])

    def test_nonfinite_input_rejected(self):
        bb = ConvBackbone((8, 8, 8))
        bad = torch.full((1, 16, 16, 3), float("nan"), dtype=torch.float64)
        with pytest.raises(ValueError, match="finite"):
            bb(bad)

    def test_bad_shape_rejected(self):
        bb = ConvBackbone((8, 8, 8))
        with pytest.raises(ValueError):
            bb(torch.rand(2, 16, 16, 4, dtype=torch.float64))

    def test_gradient_check(self):
        torch.manual_seed(0)
        bb = ConvBackbone((4, 4, 4))
        x = torch.rand(2, 16, 16, 3, dtype=torch.float64)
        weights = [torch.randn_like(l) for l in bb(x).levels]

        def loss_fn():
            feats = bb(x)
            return sum((l * w).sum() for l, w in zip(feats.levels, weights))

        assert gradient_check(bb, loss_fn) <= 1e-4


class TestTextEmbedder:
    def test_token_count_and_width(self):
        emb = TextEmbedder(16)
        out = emb("the red square moving left")
        assert out.tokens.shape == (5, 16)
        assert out.class_token.shape == (1, 16)

    def test_deterministic(self):
        emb = TextEmbedder(16)
        a = emb("the blue circle")
        b = emb("the blue circle")
        assert torch.equal(a.tokens, b.tokens)
        assert torch.equal(a.class_token, b.class_token)

    def test_one_token_difference_changes_one_row(self):
        emb = TextEmbedder(16)
        a = emb("the red square moving left").tokens
        b = emb("the red square moving right").tokens
        diff = (a != b).any(dim=1)
        assert diff.tolist() == [False, False, False, False, True]

    def test_unknown_token_maps_to_reserved_row(self):
        emb = TextEmbedder(16)
        unk = emb("xyzzy").tokens
        assert torch.equal(unk[0], emb.table.weight[0])

    def test_empty_expression_rejected(self):
        emb = TextEmbedder(16)
        with pytest.raises(ValueError):
            emb("   ")

    def test_embed_text_wrapper(self):
        emb = TextEmbedder(8)
        out = embed_text("the square", emb)
        assert out.tokens.shape == (2, 8)


class TestProjectAndPool:
    def _feats(self, c=16, t=3, h=4, w=5):
        bb = ConvBackbone((c, c, c))
        return bb(torch.rand(t, 32, 32, 3, dtype=torch.float64))

    def test_constant_field_gives_projected_constant(self):
        proj = FeatureProjector((16, 16, 16), 16)
        from rvoslite.backbone import MultiScaleFeatures
        v = torch.rand(16, dtype=torch.float64)
        level = v.expand(2, 4, 4, 16).clone()
        feats = MultiScaleFeatures([level], [4])
        proj_single = FeatureProjector((16,), 16)
        out = proj_single.project_and_pool(feats, 0)
        expected = proj_single.levels[0](v)
        assert torch.allclose(out, expected.expand(2, -1), atol=1e-12)

    def test_identity_projection_equals_spatial_mean(self):
        from rvoslite.backbone import MultiScaleFeatures
        torch.manual_seed(1)
        level = torch.rand(3, 4, 5, 16, dtype=torch.float64)
        proj = FeatureProjector((16,), 16)
        with torch.no_grad():
            proj.levels[0].weight.copy_(torch.eye(16, dtype=torch.float64))
            proj.levels[0].bias.zero_()
        out = proj.project_and_pool(MultiScaleFeatures([level], [4]), 0)
        oracle = spatial_mean_bruteforce(level.numpy())
        assert np.allclose(out.detach().numpy(), oracle, atol=1e-12)

    def test_zero_weights_bias_only(self):
        from rvoslite.backbone import MultiScaleFeatures
        level = torch.rand(2, 3, 3, 8, dtype=torch.float64)
        proj = FeatureProjector((8,), 8)
        with torch.no_grad():
            proj.levels[0].weight.zero_()
            proj.levels[0].bias.copy_(torch.arange(8, dtype=torch.float64))
        out = proj.project_and_pool(MultiScaleFeatures([level], [4]), 0)
        assert torch.allclose(out, torch.arange(8, dtype=torch.float64).expand(2, -1))

    def test_level_out_of_range(self):
        proj = FeatureProjector((8, 8), 8)
        feats = self._feats(8)
        with pytest.raises(IndexError):
            proj.project_and_pool(feats, 5)

    def test_pooling_linearity_with_zero_bias(self):
        from rvoslite.backbone import MultiScaleFeatures
        torch.manual_seed(2)
        proj = FeatureProjector((8,), 8)
        with torch.no_grad():
            proj.levels[0].bias.zero_()
        a = torch.rand(2, 3, 3, 8, dtype=torch.float64)
        b = torch.rand(2, 3, 3, 8, dtype=torch.float64)
        alpha, beta = 0.7, -1.3
        combined = proj.project_and_pool(
            MultiScaleFeatures([alpha * a + beta * b], [4]), 0)
        separate = (alpha * proj.project_and_pool(MultiScaleFeatures([a], [4]), 0)
                    + beta * proj.project_and_pool(MultiScaleFeatures([b], [4]), 0))
        assert torch.allclose(combined, separate, atol=1e-12)

    def test_project_and_pool_wrapper(self):
        feats = self._feats(16)
        proj = FeatureProjector((16, 16, 16), 16)
        out = project_and_pool(feats, -1, proj)
        assert out.shape == (3, 16)


def test_model_dims_validation():
    with pytest.raises(ValueError):
        ModelDims(channels=10, heads=3)
    with pytest.raises(ValueError):
        ModelDims(channels=0)
    dims = ModelDims()
    assert dims.num_levels == 3


def test_randomize_parameters_changes_everything():
    bb = ConvBackbone((4, 4, 4))
    before = [p.clone() for p in bb.parameters()]
    randomize_parameters(bb, seed=1)
    after = list(bb.parameters())
    assert all(not torch.equal(b, a) for b, a in zip(before, after))
