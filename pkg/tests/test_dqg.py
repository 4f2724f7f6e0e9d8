import numpy as np
import pytest
import torch
from torch import nn
from torch.func import functional_call

from egoseg.lib.domain import FeatureMap
from egoseg.lib.dqg import (
    DynamicQueryGenerator,
    SimilarityMap,
    align_boundary_feature,
    make_queries,
    select_queries,
    similarity_map,
)
from egoseg.lib.errors import ShapeError, ValidationError
from egoseg.lib.layers import MLP


def cosine_oracle(pix: np.ndarray, tile: np.ndarray, n: int) -> np.ndarray:
    """Per-position dot / norm with the tile repeated n x n; pix is (C, H, W)."""
    _, h, w = pix.shape
    th, tw = tile.shape[1:]
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            a, b = pix[:, y, x], tile[:, y % th, x % tw]
            denom = np.linalg.norm(a) * np.linalg.norm(b)
            out[y, x] = a @ b / denom if denom > 0 else 0.0
    return out


def sort_oracle(values: np.ndarray, n: int) -> list[int]:
    """Indices of the n largest values, ties broken by smaller row-major index."""
    flat = values.ravel()
    return sorted(range(flat.size), key=lambda i: (-flat[i], i))[:n]


class TestAlign:
    def test_shape_arithmetic(self):
        f_int = FeatureMap(torch.randn(1, 8, 16, 16))
        aligned = align_boundary_feature(f_int, MLP(8, 32, 32, 2), n=4)
        assert aligned.data.shape == (1, 32, 4, 4)

    def test_identity_partition(self):
        f_int = FeatureMap(torch.randn(2, 8, 5, 7))
        aligned = align_boundary_feature(f_int, nn.Linear(8, 3), n=1)
        assert aligned.data.shape == (2, 3, 5, 7)

    def test_target_size_and_padding(self):
        f_int = FeatureMap(torch.randn(1, 4, 7, 7))
        aligned = align_boundary_feature(f_int, nn.Linear(4, 4), n=4, target_size=(7, 7), pad=True)
        assert aligned.size == (2, 2)

    def test_smaller_than_partition(self):
        with pytest.raises(ShapeError):
            align_boundary_feature(FeatureMap(torch.randn(1, 4, 3, 3)), nn.Linear(4, 4), n=4)

    def test_projection_gradient(self, gradcheck_params):
        torch.manual_seed(0)
        projection = MLP(4, 6, 6, 2)
        f_int = FeatureMap(torch.randn(1, 4, 8, 8, dtype=torch.float64))
        weight = torch.randn(1, 6, 2, 2, dtype=torch.float64)

        def loss(module, params):
            proj = lambda x: functional_call(module, params, (x,))  # noqa: E731
            return (align_boundary_feature(f_int, proj, n=4).data * weight).sum()

        assert gradcheck_params(projection, loss, fast_mode=False)


class TestSimilarity:
    def test_self_similarity_is_one(self):
        tile = torch.randn(1, 3, 2, 2)
        pix = FeatureMap(tile.repeat(1, 1, 2, 2))
        s = similarity_map(pix, FeatureMap(tile), n=2)
        torch.testing.assert_close(s.values, torch.ones(1, 4, 4))

    def test_orthogonal_is_zero(self):
        pix = torch.zeros(1, 2, 4, 4)
        pix[:, 0] = torch.rand(4, 4) + 0.1
        tile = torch.zeros(1, 2, 2, 2)
        tile[:, 1] = torch.rand(2, 2) + 0.1
        s = similarity_map(FeatureMap(pix), FeatureMap(tile), n=2)
        assert torch.equal(s.values, torch.zeros(1, 4, 4))

    def test_matches_cosine_oracle(self, rng):
        for _ in range(10):
            pix = rng.standard_normal((3, 4, 4))
            tile = rng.standard_normal((3, 2, 2))
            s = similarity_map(
                FeatureMap(torch.from_numpy(pix)[None]), FeatureMap(torch.from_numpy(tile)[None]), n=2
            )
            np.testing.assert_allclose(s.values[0].numpy(), cosine_oracle(pix, tile, 2), atol=1e-10)

    def test_zero_vectors_have_zero_similarity(self):
        pix = torch.randn(1, 3, 4, 4)
        pix[..., 0, 0] = 0
        s = similarity_map(FeatureMap(pix), FeatureMap(torch.randn(1, 3, 2, 2)), n=2)
        assert s.values[0, 0, 0] == 0

    def test_values_bounded(self):
        s = similarity_map(FeatureMap(torch.randn(4, 8, 8, 8)), FeatureMap(torch.randn(4, 8, 2, 2)), n=4)
        assert s.values.min() >= -1 and s.values.max() <= 1

    def test_non_divisible_without_padding(self):
        with pytest.raises(ShapeError):
            similarity_map(FeatureMap(torch.randn(1, 2, 5, 4)), FeatureMap(torch.randn(1, 2, 2, 2)), n=2)

    def test_padding_crops_back(self, rng):
        pix = rng.standard_normal((3, 5, 5))
        tile = rng.standard_normal((3, 3, 3))
        s = similarity_map(
            FeatureMap(torch.from_numpy(pix)[None]), FeatureMap(torch.from_numpy(tile)[None]), n=2, pad=True
        )
        assert s.values.shape == (1, 5, 5)
        np.testing.assert_allclose(s.values[0].numpy(), cosine_oracle(pix, tile, 2), atol=1e-10)

    def test_tile_size_checked(self):
        with pytest.raises(ShapeError):
            similarity_map(FeatureMap(torch.randn(1, 2, 4, 4)), FeatureMap(torch.randn(1, 2, 1, 1)), n=2)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            similarity_map(FeatureMap(torch.randn(1, 2, 4, 4)), FeatureMap(torch.randn(1, 3, 2, 2)), n=2)


class TestSelect:
    def test_unambiguous_top_n(self):
        values = torch.zeros(1, 4, 4)
        chosen = [(0, 3), (1, 1), (2, 0), (3, 2), (3, 3)]
        for y, x in chosen:
            values[0, y, x] = 1.0
        _, positions = select_queries(SimilarityMap(values, 2), FeatureMap(torch.randn(1, 2, 4, 4)), 5)
        assert sorted(map(tuple, positions[0].tolist())) == chosen

    def test_uniform_map_takes_row_major_prefix(self):
        values = torch.full((1, 3, 3), 0.25)
        pix = torch.randn(1, 4, 3, 3)
        selected, positions = select_queries(SimilarityMap(values, 1), FeatureMap(pix), 5)
        assert positions[0].tolist() == [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1]]
        assert torch.equal(selected[0, 4], pix[0, :, 1, 1])

    def test_matches_sort_oracle(self, rng):
        for _ in range(1000):
            # Coarse values make ties common.
            values = rng.integers(-3, 4, size=(6, 6)) / 3
            pix = torch.randn(1, 2, 6, 6)
            _, positions = select_queries(
                SimilarityMap(torch.from_numpy(values)[None], 2), FeatureMap(pix), 5
            )
            expected = sort_oracle(values, 5)
            assert [y * 6 + x for y, x in positions[0].tolist()] == expected

    def test_selected_features_are_gathered(self, rng):
        values = torch.from_numpy(rng.uniform(-1, 1, size=(2, 4, 4)))
        pix = torch.randn(2, 3, 4, 4)
        selected, positions = select_queries(SimilarityMap(values, 2), FeatureMap(pix), 3)
        for b in range(2):
            for i, (y, x) in enumerate(positions[b].tolist()):
                assert torch.equal(selected[b, i], pix[b, :, y, x])

    def test_invariant_under_boundary_rescaling(self):
        pix = FeatureMap(torch.randn(1, 4, 8, 8))
        tile = torch.randn(1, 4, 2, 2)
        first = similarity_map(pix, FeatureMap(tile), n=4)
        second = similarity_map(pix, FeatureMap(tile * 7.5), n=4)
        assert torch.equal(select_queries(first, pix, 5)[1], select_queries(second, pix, 5)[1])

    def test_too_many_queries(self):
        with pytest.raises(ValidationError):
            select_queries(SimilarityMap(torch.zeros(1, 2, 2), 1), FeatureMap(torch.randn(1, 2, 2, 2)), 5)


class TestFuse:
    def test_zero_learnable(self):
        selected = torch.randn(2, 5, 8)
        assert torch.equal(make_queries(selected, torch.zeros(2, 5, 8)).fused, selected)

    def test_zero_selected(self):
        learnable = torch.randn(2, 5, 8)
        assert torch.equal(make_queries(torch.zeros(2, 5, 8), learnable).fused, learnable)

    def test_elementwise_sum(self):
        a, b = torch.randn(1, 6, 4), torch.randn(1, 6, 4)
        queries = make_queries(a, b)
        assert torch.equal(queries.fused, a + b)
        assert queries.num_queries == 6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            make_queries(torch.zeros(1, 5, 8), torch.zeros(1, 4, 8))


class TestGenerator:
    def test_forward(self):
        torch.manual_seed(0)
        dqg = DynamicQueryGenerator(boundary_channels=6, pixel_channels=8, num_queries=5, n_partition=2)
        queries = dqg(FeatureMap(torch.randn(2, 8, 4, 4)), FeatureMap(torch.randn(2, 6, 4, 4)))
        assert queries.fused.shape == (2, 5, 8)
        assert queries.positions.shape == (2, 5, 2)
        assert queries.similarity.values.shape == (2, 4, 4)
        assert torch.equal(queries.learnable[0], dqg.query_feat.weight)

    def test_disabled_uses_learnable_only(self):
        dqg = DynamicQueryGenerator(6, 8, num_queries=7, enabled=False)
        queries = dqg(FeatureMap(torch.randn(3, 8, 4, 4)))
        assert not queries.selected.any()
        assert torch.equal(queries.fused, queries.learnable)
        assert queries.positions.shape == (3, 0, 2)
        assert dqg.align is None

    def test_gradient_reaches_pixels_and_learnable(self):
        dqg = DynamicQueryGenerator(4, 4, num_queries=5, n_partition=2)
        pix = torch.randn(1, 4, 4, 4, requires_grad=True)
        queries = dqg(FeatureMap(pix), FeatureMap(torch.randn(1, 4, 4, 4)))
        queries.fused.sum().backward()
        assert pix.grad.abs().sum() > 0
        assert dqg.query_feat.weight.grad is not None

    def test_only_alignment_is_frozen(self):
        dqg = DynamicQueryGenerator(4, 4, num_queries=5, n_partition=2)
        f_int = torch.randn(1, 4, 4, 4, requires_grad=True)
        queries = dqg(FeatureMap(torch.randn(1, 4, 4, 4)), FeatureMap(f_int))
        queries.fused.sum().backward()

        trainable = {name for name, p in dqg.named_parameters() if p.requires_grad}
        assert trainable == {"query_feat.weight"}
        assert all(p.grad is None for p in dqg.align.parameters())
        # selection indices are constants, so the boundary feature gets nothing either
        assert f_int.grad is None
