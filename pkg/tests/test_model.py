import pytest
import torch

from egoseg.lib.config import build_config
from egoseg.lib.decoder import DualContextFeatureSelector, PixelMemory
from egoseg.lib.losses import total_loss
from egoseg.lib.model import HandObjectSegmenter
from egoseg.lib.registry import PresetRegistry
from egoseg.lib.trainer import compute_losses


@pytest.fixture
def cfg(tiny_settings):
    return build_config(tiny_settings, {"decoder.layers": 3})


def make_model(cfg, seed: int = 0) -> HandObjectSegmenter:
    torch.manual_seed(seed)
    return HandObjectSegmenter(cfg).eval()


def random_labels(shape: tuple[int, ...], seed: int = 0) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.randint(0, 6, shape, generator=generator)


class TestForward:
    def test_output_shapes(self, cfg):
        output = make_model(cfg)(torch.randn(2, 3, 32, 32))
        seg = output.segmentation
        assert seg.class_scores.shape == (2, 5, 6)
        assert seg.mask_logits.shape == (2, 5, 32, 32)
        assert seg.composed.shape == (2, 5, 32, 32)
        assert output.boundary.boundary.shape == (2, 1, 32, 32)
        assert output.queries.fused.shape == (2, 5, 8)

    def test_probabilities_bounded(self, cfg):
        output = make_model(cfg)(torch.randn(2, 3, 32, 32))
        seg = output.segmentation
        torch.testing.assert_close(seg.class_scores.sum(-1), torch.ones(2, 5))
        assert 0 <= seg.composed.min() and seg.composed.max() <= 1
        boundary = output.boundary.boundary
        assert 0 <= boundary.min() and boundary.max() <= 1

    def test_deterministic_in_eval(self, cfg):
        model = make_model(cfg)
        images = torch.randn(1, 3, 32, 32)
        a, b = model(images), model(images)
        assert torch.equal(a.segmentation.composed, b.segmentation.composed)

    def test_layers_cycle_through_levels(self, cfg):
        model = make_model(cfg)
        assert model.level_of_layer == [0, 1, 0]
        sizes = cfg.encoder.level_sizes(cfg.image_size)
        assert [s.size for s in model.selectors] == [sizes[0], sizes[1], sizes[0]]

    def test_return_attention(self, cfg):
        output = make_model(cfg)(torch.randn(2, 3, 32, 32), return_attention=True)
        sizes = cfg.encoder.level_sizes(cfg.image_size)
        assert len(output.dfs_traces) == len(output.layer_attention) == 3
        for level, weights in zip([0, 1, 0], output.layer_attention):
            h, w = sizes[level]
            assert weights.cross_weights.shape == (2, 2, 5, h * w)
            assert weights.self_weights.shape == (2, 2, 5, 5)
            torch.testing.assert_close(weights.cross_weights.sum(-1), torch.ones(2, 2, 5))
        for level, trace in zip([0, 1, 0], output.dfs_traces):
            h, w = sizes[level]
            assert trace.weights.shape[-2:] == (h * w, h * w)

    def test_attention_off_by_default(self, cfg):
        output = make_model(cfg)(torch.randn(1, 3, 32, 32))
        assert output.dfs_traces == [] and output.layer_attention == []


class TestBackward:
    def test_every_trainable_parameter_gets_gradient(self, cfg):
        model = make_model(cfg).train()
        output = model(torch.randn(2, 3, 32, 32))
        components = compute_losses(output, random_labels((2, 32, 32)), cfg)
        total_loss(components, cfg.loss).backward()

        missing = [name for name, p in model.named_parameters() if p.requires_grad and p.grad is None]
        assert missing == []

    def test_query_alignment_is_frozen(self, cfg):
        model = make_model(cfg)
        frozen = {name for name, p in model.named_parameters() if not p.requires_grad}
        assert frozen and all(name.startswith("dqg.align.") for name in frozen)


class TestComponentToggles:
    def test_baseline_has_no_boundary_path(self, cfg):
        base = build_config(
            cfg.model_dump(), {"ipp.enabled": False, "dqg.enabled": False, "decoder.dfs": False}
        )
        model = make_model(base)
        output = model(torch.randn(1, 3, 32, 32), return_attention=True)
        assert model.ipp is None
        assert output.boundary is None
        assert all(isinstance(s, PixelMemory) for s in model.selectors)
        assert output.dfs_traces == [None, None, None]
        assert not output.queries.selected.any()
        assert output.queries.positions.shape == (1, 0, 2)

    def test_ipp_only_keeps_learnable_queries(self, cfg):
        ipp_only = build_config(cfg.model_dump(), {"dqg.enabled": False, "decoder.dfs": False})
        output = make_model(ipp_only)(torch.randn(1, 3, 32, 32))
        assert output.boundary is not None
        assert not output.queries.selected.any()

    def test_dfs_selectors_when_enabled(self, cfg):
        model = make_model(cfg)
        assert all(isinstance(s, DualContextFeatureSelector) for s in model.selectors)

    def test_components_add_parameters(self, cfg):
        base = build_config(
            cfg.model_dump(), {"ipp.enabled": False, "dqg.enabled": False, "decoder.dfs": False}
        )
        assert make_model(base).parameter_count < make_model(cfg).parameter_count


class TestDeskScale:
    def test_query_search_uses_multi_pixel_tiles(self):
        desk = PresetRegistry.from_filesystem().create("desk")
        output = make_model(desk)(torch.randn(1, 3, 64, 64))
        similarity = output.queries.similarity
        assert similarity.values.shape == (1, 16, 16)
        assert similarity.partition == 4
        assert len({tuple(p) for p in output.queries.positions[0].tolist()}) == 5
