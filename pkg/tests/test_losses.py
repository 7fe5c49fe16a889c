import math

import numpy as np
import pytest

from promptseg import tensor as T
from promptseg.errors import ContractError, DimensionError
from promptseg.gradcheck import check_gradients
from promptseg.losses import actual_iou, distill_loss, iou_loss, mask_loss, total_loss
from promptseg.tensor import Tensor


def _gt(h=16):
    g = np.zeros((1, h, h))
    g[0, : h // 2] = 1
    return g


def test_perfect_prediction_near_zero():
    g = _gt()
    dice, bce = mask_loss(Tensor(np.where(g, 40.0, -40.0)[:, None]), g)
    assert dice.item() < 1e-4 and bce.item() < 1e-4


def test_disjoint_dice_near_one():
    g = _gt()
    dice, _ = mask_loss(Tensor(np.where(g, -40.0, 40.0)[:, None]), g)
    assert dice.item() > 1 - 1e-6


def test_bce_at_half_is_ln2():
    _, bce = mask_loss(Tensor(np.zeros((1, 1, 16, 16))), _gt())
    assert bce.item() == pytest.approx(math.log(2), abs=1e-6)


def test_bce_matches_direct_formula(rng):
    x = rng.standard_normal((2, 1, 8, 8)) * 3
    g = (rng.random((2, 8, 8)) > 0.5).astype(float)
    p = 1 / (1 + np.exp(-x[:, 0]))
    ref = -np.mean(g * np.log(p) + (1 - g) * np.log(1 - p))
    assert mask_loss(Tensor(x), g)[1].item() == pytest.approx(ref, rel=1e-10)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        mask_loss(Tensor(np.zeros((1, 1, 8, 8))), np.zeros((1, 8, 9)))


def test_non_binary_gt():
    with pytest.raises(ContractError):
        mask_loss(Tensor(np.zeros((1, 1, 2, 2))), np.full((1, 2, 2), 0.5))


def test_iou_loss_cases():
    m = np.zeros((4, 4))
    m[:2] = 1
    assert iou_loss(1.0, m, m) == 0
    assert iou_loss(0.5, m, m) == pytest.approx(0.25)
    assert iou_loss(0.3, np.zeros((4, 4)), np.zeros((4, 4))) == pytest.approx(0.49)


def test_actual_iou_formula():
    a = np.zeros((10, 10))
    b = np.zeros((10, 10))
    a[:5] = 1
    b[:, :5] = 1
    assert actual_iou(a, b) == pytest.approx(25 / 75)


def test_total_is_sum_of_parts(rng):
    x = Tensor(rng.standard_normal((2, 1, 8, 8)), requires_grad=True)
    g = (rng.random((2, 8, 8)) > 0.5).astype(float)
    iou = Tensor(np.array([0.3, 0.6]), requires_grad=True)
    total, parts = total_loss(x, g, iou)
    assert parts.total == pytest.approx(parts.dice + parts.bce + parts.iou_mse, abs=1e-6)
    assert min(parts.dice, parts.bce, parts.iou_mse) >= 0
    total.backward()
    assert np.isfinite(x.grad).all() and np.isfinite(iou.grad).all()


def test_total_perfect_prediction_small():
    g = _gt()
    _, parts = total_loss(Tensor(np.where(g, 40.0, -40.0)[:, None]), g, Tensor(np.ones(1)))
    assert parts.total < 1e-3


def test_mask_loss_gradient(rng):
    x = Tensor(rng.standard_normal((1, 1, 6, 6)), requires_grad=True)
    g = (rng.random((1, 6, 6)) > 0.5).astype(float)
    res = check_gradients(lambda: T.add(*mask_loss(x, g)), [x], h=1e-6)
    assert max(r[4] for r in res) < 1e-3


@pytest.mark.parametrize("seed", range(10))
def test_descent_step_lowers_loss(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, 1, 8, 8)), requires_grad=True)
    g = (rng.random((1, 8, 8)) > 0.5).astype(float)
    loss = T.add(*mask_loss(x, g))
    loss.backward()
    moved = Tensor(x.data - 1e-3 * x.grad / np.linalg.norm(x.grad))
    assert T.add(*mask_loss(moved, g)).item() < loss.item()


def test_distill_identical_and_offset(rng):
    e = rng.standard_normal((1, 8, 4, 4))
    assert distill_loss(Tensor(e), e).item() == 0
    assert distill_loss(Tensor(e + 0.5), e).item() == pytest.approx(0.5)


def test_distill_resizes_teacher(rng):
    t = np.ones((1, 8, 16, 16)) * 2
    assert distill_loss(Tensor(np.zeros((1, 8, 4, 4))), t).item() == pytest.approx(2.0)


def test_distill_channel_mismatch():
    with pytest.raises(ContractError):
        distill_loss(Tensor(np.zeros((1, 8, 4, 4))), np.zeros((1, 4, 4, 4)))
