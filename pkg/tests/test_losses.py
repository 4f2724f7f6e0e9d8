import itertools
import math

import numpy as np
import pytest
import torch

from egoseg.lib.config import LossWeights
from egoseg.lib.errors import NonFiniteLossError, ShapeError, ValidationError
from egoseg.lib.losses import (
    NO_OBJECT,
    LossComponents,
    PixelCounts,
    ce_mask_loss,
    class_targets,
    cls_loss,
    coco_loss,
    dice_loss,
    mask_losses,
    pixel_counts,
    total_loss,
)


def coco_oracle(hard, soft, tau) -> float:
    lh, rh = hard[0] > tau, hard[1] > tau
    return (not lh) * soft[2] + (not rh) * soft[3] + (not (lh and rh)) * soft[4]


class TestPixelCounts:
    def test_empty(self):
        counts = pixel_counts(torch.zeros(5, 8, 8))
        assert counts.hard.tolist() == [0] * 5
        assert counts.soft.tolist() == [0] * 5

    def test_saturated_left_hand(self):
        composed = torch.zeros(5, 64, 64)
        composed[0] = 1
        counts = pixel_counts(composed)
        assert counts.hard[0] == 4096
        assert counts.n_lh == 4096

    def test_matches_counting_oracle(self, rng):
        values = rng.random((5, 8, 8))
        counts = pixel_counts(torch.from_numpy(values), presence_threshold=0.3)
        for k in range(5):
            assert counts.hard[k] == sum(1 for v in values[k].ravel() if v > 0.3)
            assert counts.soft[k].item() == pytest.approx(values[k].sum(), abs=1e-12)

    def test_batched_and_normalized(self):
        composed = torch.full((2, 5, 4, 4), 0.75)
        counts = pixel_counts(composed, normalize=True)
        assert counts.soft.shape == (2, 5)
        torch.testing.assert_close(counts.soft, torch.full((2, 5), 0.75))
        assert (counts.hard == 16).all()

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            pixel_counts(torch.full((5, 2, 2), 1.5))

    def test_wrong_shape(self):
        with pytest.raises(ShapeError):
            pixel_counts(torch.zeros(4, 2, 2))


class TestCocoLoss:
    def test_gate_closed(self):
        counts = PixelCounts.from_values([150, 0, 500, 0, 0])
        assert coco_loss(counts, 100).item() == 0

    def test_gate_open(self):
        counts = PixelCounts.from_values([0, 0, 321, 0, 0])
        assert coco_loss(counts, 100).item() == 321

    def test_two_hand_needs_both(self):
        counts = PixelCounts.from_values([0, 150, 0, 0, 200])
        assert coco_loss(counts, 100).item() == 200

    def test_threshold_is_strict(self):
        counts = PixelCounts.from_values([100, 101, 7, 9, 11])
        assert coco_loss(counts, 100).item() == 7 + 11

    def test_matches_closed_form(self, rng):
        for _ in range(10_000):
            hard = rng.integers(0, 5001, size=5).astype(float)
            soft = rng.uniform(0, 5000, size=5)
            tau = int(rng.choice(np.arange(50, 301, 50)))
            got = coco_loss(PixelCounts.from_values(hard.tolist(), soft.tolist()), tau).item()
            assert got == pytest.approx(coco_oracle(hard, soft, tau), abs=1e-9)

    def test_gate_grid(self):
        grid = [0, 50, 99, 100, 101, 400]
        tau = 100
        for lh, rh, lo, ro, to in itertools.product(grid, repeat=5):
            counts = PixelCounts.from_values([lh, rh, lo, ro, to])
            expected = (lh <= tau) * lo + (rh <= tau) * ro + (not (lh > tau and rh > tau)) * to
            assert coco_loss(counts, tau).item() == expected

    def test_batch_mean_and_none(self):
        counts = PixelCounts.from_values([[0, 0, 10, 0, 0], [200, 200, 10, 10, 10]])
        assert coco_loss(counts, 100, reduction="none").tolist() == [10, 0]
        assert coco_loss(counts, 100).item() == 5

    def test_gradient_flows_through_soft_counts_only(self):
        composed = torch.zeros(5, 4, 4)
        composed[2] = 0.8
        composed.requires_grad_(True)
        loss = coco_loss(pixel_counts(composed), tau=1)
        loss.backward()
        # Both hands absent: every object channel is penalized, hands get nothing.
        assert torch.equal(composed.grad[2:], torch.ones(3, 4, 4))
        assert not composed.grad[:2].any()


class TestDiceLoss:
    def test_perfect_overlap(self):
        gt = torch.zeros(8, 8)
        gt[2:5, 1:7] = 1
        assert dice_loss(gt, gt) < 1e-5

    def test_disjoint(self):
        pred, gt = torch.zeros(8, 8), torch.zeros(8, 8)
        pred[:4] = 1
        gt[4:] = 1
        assert dice_loss(pred, gt).item() == pytest.approx(1.0, abs=1e-6)

    def test_matches_formula(self, rng):
        pred = rng.random((8, 8))
        gt = (rng.random((8, 8)) > 0.5).astype(float)
        expected = 1 - 2 * (pred * gt).sum() / (pred.sum() + gt.sum() + 1e-6)
        got = dice_loss(torch.from_numpy(pred), torch.from_numpy(gt)).item()
        assert got == pytest.approx(expected, abs=1e-10)

    def test_gradient(self, rng):
        pred = torch.from_numpy(rng.uniform(0.05, 0.95, size=(8, 8))).requires_grad_(True)
        gt = torch.from_numpy((rng.random((8, 8)) > 0.5).astype(float))
        assert torch.autograd.gradcheck(lambda p: dice_loss(p, gt), (pred,), eps=1e-6, atol=1e-6, rtol=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice_loss(torch.zeros(4, 4), torch.zeros(4, 3))


class TestMaskAndClassLosses:
    def test_ce_uniform_half(self):
        gt = (torch.rand(6, 6) > 0.5).double()
        loss = ce_mask_loss(torch.full((6, 6), 0.5, dtype=torch.float64), gt)
        assert loss.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_ce_perfect(self):
        gt = (torch.rand(6, 6) > 0.5).double()
        assert ce_mask_loss(gt, gt) < 1e-6

    def test_cls_matches_oracle(self, rng):
        scores = rng.dirichlet(np.ones(6), size=(2, 5))
        targets = rng.integers(0, 6, size=(2, 5))
        expected = -np.mean([math.log(scores[b, i, targets[b, i]]) for b in range(2) for i in range(5)])
        got = cls_loss(torch.from_numpy(scores), torch.from_numpy(targets)).item()
        assert got == pytest.approx(expected, abs=1e-10)

    def test_cls_perfect(self):
        scores = torch.eye(6)[[0, 1, 2, 3, 4]].double()
        assert cls_loss(scores, torch.arange(5)) < 1e-12

    def test_cls_errors(self):
        with pytest.raises(ShapeError):
            cls_loss(torch.rand(5, 6), torch.zeros(4, dtype=torch.long))
        with pytest.raises(ValidationError):
            cls_loss(torch.rand(5, 6), torch.full((5,), 6))

    def test_class_targets(self):
        gt = torch.zeros(1, 5, 4, 4)
        gt[0, 1, 0, 0] = 1
        gt[0, 4, 2, 2] = 1
        assert class_targets(gt, 7).tolist() == [[NO_OBJECT, 1, NO_OBJECT, NO_OBJECT, 4, NO_OBJECT, NO_OBJECT]]

    def test_mask_losses_use_present_classes(self):
        gt = torch.zeros(1, 5, 4, 4)
        gt[0, 0, :2] = 1
        probs = torch.full((1, 6, 4, 4), 0.5, dtype=torch.float32)
        probs[0, 0] = gt[0, 0]
        dice, ce = mask_losses(probs, gt)
        assert dice < 1e-5
        assert ce < 1e-6

    def test_mask_losses_without_classes_are_attached_zero(self):
        probs = torch.rand(2, 5, 4, 4, requires_grad=True)
        dice, ce = mask_losses(probs, torch.zeros(2, 5, 4, 4))
        assert dice.item() == 0 and ce.item() == 0
        (dice + ce).backward()
        assert probs.grad is not None


class TestTotalLoss:
    def test_default_weights(self):
        assert total_loss(LossComponents.of(boundary=1, coco=1, cls=1, dice=1, ce=1), LossWeights()).item() == 13

    def test_zero_weights(self):
        weights = LossWeights(lambda_b=0, lambda_co=0, lambda_cls=0, lambda_dic=0, lambda_ce=0)
        components = LossComponents.of(boundary=3, coco=40, cls=2, dice=0.5, ce=0.7)
        assert total_loss(components, weights).item() == 0

    def test_weighted_breakdown_sums_to_total(self):
        components = LossComponents.of(boundary=0.3, coco=12.0, cls=1.1, dice=0.4, ce=0.2)
        weights = LossWeights(lambda_co=0.5)
        total = total_loss(components, weights).item()
        assert sum(components.weighted(weights).values()) == pytest.approx(total)

    def test_non_finite_component(self):
        with pytest.raises(NonFiniteLossError) as err:
            total_loss(LossComponents.of(dice=float("nan")), LossWeights(), iteration=7, lr=0.01)
        assert err.value.iteration == 7
        assert math.isnan(err.value.components["dice"])


class TestLossProperties:
    def test_coco_nondecreasing_in_object_counts(self, rng):
        for _ in range(1000):
            hard = rng.integers(0, 300, size=5).astype(float)
            soft = rng.uniform(0, 300, size=5)
            bumped = soft.copy()
            bumped[2:] += rng.uniform(0, 50, size=3)
            tau = 100
            before = coco_loss(PixelCounts.from_values(hard.tolist(), soft.tolist()), tau).item()
            after = coco_loss(PixelCounts.from_values(hard.tolist(), bumped.tolist()), tau).item()
            assert after >= before

    def test_dice_is_symmetric(self, rng):
        for _ in range(200):
            a = torch.from_numpy(rng.random((6, 6)))
            b = torch.from_numpy(rng.random((6, 6)))
            assert dice_loss(a, b).item() == pytest.approx(dice_loss(b, a).item(), abs=1e-12)
