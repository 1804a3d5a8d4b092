import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panoscene import gradcheck
from panoscene.geometry import CameraModel, DepthMap, uniform_depth_bins
from panoscene.losses import (IGNORE_ID, LossWeights, ce_grad, ce_loss, depth_loss, depth_targets, dice_loss,
                              focal_loss, mask_ce_loss, match_masks, scal_loss, stage1_loss, stage2_components,
                              stage2_loss)


def scal_oracle(probs, targets, mode):
    """Precision/recall/specificity terms written out one voxel at a time."""
    n, L = len(probs), len(probs[0])
    classes = [0] if mode == "geometric" else range(L)
    losses = []
    for c in classes:
        if mode == "geometric":
            q = [1.0 - probs[i][0] for i in range(n)]
            t = [1.0 if targets[i] != 0 else 0.0 for i in range(n)]
        else:
            q = [probs[i][c] for i in range(n)]
            t = [1.0 if targets[i] == c else 0.0 for i in range(n)]
            if sum(t) == 0:
                continue
        tp = sum(q[i] * t[i] for i in range(n))
        total = 0.0
        if sum(q) > 0:
            total -= math.log(tp / sum(q))
        if sum(t) > 0:
            total -= math.log(tp / sum(t))
        neg = sum(1.0 - t[i] for i in range(n))
        if neg > 0:
            total -= math.log(sum((1.0 - q[i]) * (1.0 - t[i]) for i in range(n)) / neg)
        losses.append(total)
    return sum(losses) / len(losses)


def softmax(z):
    e = np.exp(z - z.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def test_default_weights():
    w = LossWeights()
    assert dict(w.stage1) == {"ce": 1.0, "sem": 1.0, "geo": 1.0, "depth": 1e-4}
    assert dict(w.stage2) == {"mask": 1.0, "dice": 1.0, "focal": 40.0, "depth": 1e-4}
    assert (w.focal_alpha, w.focal_gamma) == (0.25, 2.0)
    with pytest.raises(ValueError):
        LossWeights(stage1={"ce": -1.0})


def test_ce_examples():
    assert ce_loss(np.zeros((3, 4)), [0, 1, 3]) == pytest.approx(math.log(4))
    logits = np.array([[60.0, 0.0, 0.0], [0.0, 0.0, 60.0]])
    assert ce_loss(logits, [0, 2]) < 1e-20
    assert ce_loss(np.zeros((2, 4)), [1, IGNORE_ID]) == pytest.approx(math.log(4))
    with pytest.raises(ValueError, match="no supervised voxels"):
        ce_loss(np.zeros((2, 3)), [IGNORE_ID, IGNORE_ID])
    g = ce_grad(np.zeros((2, 4)), [1, IGNORE_ID])
    assert not g[1].any()


def test_scal_examples():
    y = np.array([0, 1, 2, 1])
    onehot = np.eye(3)[y]
    assert scal_loss(onehot, y) == pytest.approx(0.0, abs=1e-12)
    assert scal_loss(onehot, y, "geometric") == pytest.approx(0.0, abs=1e-12)
    free = np.zeros((5, 3))
    free[:, 0] = 1.0
    assert scal_loss(free, np.zeros(5, int), "geometric") == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        scal_loss(onehot, y, "bogus")


@pytest.mark.parametrize("mode", ["semantic", "geometric"])
def test_scal_formula_oracle(rng, mode):
    for _ in range(5):
        p = softmax(rng.normal(size=(20, 3)))
        y = rng.integers(0, 3, 20)
        y[:3] = [0, 1, 2]
        assert scal_loss(p, y, mode) == pytest.approx(scal_oracle(p.tolist(), y.tolist(), mode), abs=1e-8)


def test_dice_examples():
    g = np.array([1, 0, 1, 1], bool)
    assert dice_loss(g.astype(float), g) == pytest.approx(0.0, abs=1e-6)
    assert dice_loss(np.zeros(4), g) == pytest.approx(1.0)
    assert dice_loss([0.5, 0.5], [True, False]) == pytest.approx(1 - 1.0 / (1.5 + 1e-6), abs=1e-12)
    assert dice_loss([0.5, 0.5], [True, False]) == pytest.approx(0.3333, abs=1e-4)


def test_focal_examples():
    assert focal_loss([0.0], [True]) == pytest.approx(0.25 * 0.25 * math.log(2), abs=1e-12)
    assert focal_loss([0.0], [True]) == pytest.approx(0.043322, abs=1e-6)
    assert focal_loss([40.0, -40.0], [True, False]) < 1e-15


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_focal_reduces_to_half_bce(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 3, 15)
    t = rng.random(15) < 0.5
    bce = np.mean(np.logaddexp(0, -x) * t + np.logaddexp(0, x) * ~t)
    assert focal_loss(x, t, alpha=0.5, gamma=0.0) == pytest.approx(0.5 * bce, abs=1e-8)


def test_mask_ce_examples():
    g = np.array([1, 0, 1], bool)
    assert mask_ce_loss([(np.zeros(3), g), (np.zeros(5), np.ones(5, bool))]).value == pytest.approx(math.log(2))
    assert mask_ce_loss([(np.where(g, 50.0, -50.0), g)]).value < 1e-20
    assert mask_ce_loss([]) == (0.0, True)


def test_depth_examples():
    bins = uniform_depth_bins()
    cam = CameraModel(np.diag([50.0, 50.0, 1.0, 1.0]), (2, 3), bins)
    depth = DepthMap(np.full((2, 3), 10.0))
    assert depth_loss(np.full((2, 3, 64), 1 / 64), depth, cam) == pytest.approx(math.log(64))
    tgt = depth_targets(depth, cam)
    assert np.all(tgt == np.argmin(np.abs(bins - 10.0)))
    perfect = np.eye(64)[tgt]
    assert depth_loss(perfect, depth, cam) == 0.0
    with pytest.raises(ValueError):
        depth_loss(perfect, DepthMap(np.ones((2, 3)), np.zeros((2, 3), bool)), cam)
    with pytest.raises(ValueError):
        depth_loss(perfect[:1], depth, cam)


def test_stage_sums():
    ones = {"ce": 1, "sem": 1, "geo": 1, "depth": 1}
    assert stage1_loss(ones) == pytest.approx(3.0001, abs=1e-12)
    assert stage1_loss(dict.fromkeys(ones, 0.0)) == 0.0
    assert stage2_loss({"mask": 1, "dice": 1, "focal": 1, "depth": 1}) == pytest.approx(42.0001, abs=1e-12)
    with pytest.raises(KeyError):
        stage1_loss({"ce": 1})


def test_stage_linear_in_weights():
    comp = {"ce": 0.7, "sem": 1.3, "geo": 0.2, "depth": 5.0}
    base = stage1_loss(comp)
    w = LossWeights(stage1={"ce": 1.0, "sem": 2.0, "geo": 1.0, "depth": 1e-4})
    assert stage1_loss(comp, w) - base == pytest.approx(comp["sem"], abs=1e-12)


def test_stage2_components_after_matching(rng):
    gts = np.zeros((2, 12), bool)
    gts[0, :5] = True
    gts[1, 6:] = True
    logits = np.full((3, 12), -4.0)
    logits[1, :5] = 4.0
    logits[2, 6:11] = 4.0
    comp = stage2_components(logits, gts)
    assert comp["pairs"] == [(1, 0), (2, 1)] == match_masks(logits, gts)
    assert not comp["no_matches"]
    matched = [(logits[1], gts[0]), (logits[2], gts[1])]
    assert comp["mask"] == pytest.approx(mask_ce_loss(matched).value)
    empty = stage2_components(np.full((2, 12), -4.0), gts)
    assert empty["no_matches"] and empty["mask"] == empty["dice"] == empty["focal"] == 0.0


@pytest.mark.parametrize("name", sorted(gradcheck.CASES))
def test_gradients_match_finite_differences(name):
    row = gradcheck.check_loss(name, trials=25, seed=7)
    assert row.max_rel_err < 1e-4, row


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p = softmax(rng.normal(size=(10, 3)))
    y = rng.integers(0, 3, 10)
    t = rng.random(10) < 0.5
    assert ce_loss(np.log(p), y) >= 0
    assert scal_loss(p, y) >= 0 and scal_loss(p, y, "geometric") >= 0
    assert dice_loss(p[:, 0], t) >= 0
    assert focal_loss(rng.normal(size=10), t) >= 0
    assert mask_ce_loss([(rng.normal(size=10), t)]).value >= 0
