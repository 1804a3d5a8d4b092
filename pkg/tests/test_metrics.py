import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panoscene.decode import PanopticGrid
from panoscene.matching import Segment
from panoscene.metrics import (CLASS_NAMES, SEMANTIC_KITTI, ClassTaxonomy, evaluate, panoptic_quality,
                               segments_from_grid, ssc_iou_miou)
from panoscene.oracles import pq_from_counts
from panoscene.synthetic import random_grid_pair


def seg(cls, voxels):
    return Segment.from_indices(cls, voxels)


def test_taxonomy():
    t = SEMANTIC_KITTI
    assert t.num_classes == 20 and CLASS_NAMES[0] == "free"
    assert [t.name(c) for c in sorted(t.thing_ids)] == [
        "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person", "bicyclist", "motorcyclist"]
    assert [t.name(c) for c in sorted(t.stuff_ids)] == [
        "road", "parking", "sidewalk", "other-ground", "building", "fence", "vegetation", "trunk",
        "terrain", "pole", "traffic-sign"]
    with pytest.raises(ValueError):
        ClassTaxonomy(thing_ids=frozenset({1, 9}))
    with pytest.raises(ValueError):
        ClassTaxonomy(stuff_ids=frozenset({0, 9}))


def test_segments_three_cars_and_road():
    sem = np.zeros((6, 4, 2), np.int64)
    inst = np.zeros_like(sem)
    sem[:, :, 0] = 9
    inst[:, :, 0] = 7  # stuff instance IDs are ignored
    for k, x in enumerate((0, 2, 4)):
        sem[x, 1:3, 1] = 1
        inst[x, 1:3, 1] = k + 1
    segs = segments_from_grid(PanopticGrid(sem, inst))
    assert sorted((s.class_id, len(s)) for s in segs) == [(1, 2), (1, 2), (1, 2), (9, 24)]


def test_segments_trivial_grids():
    assert segments_from_grid(PanopticGrid.semantic_only(np.zeros((2, 2, 2)))) == []
    assert segments_from_grid(PanopticGrid.semantic_only(np.full((2, 2, 2), 255))) == []


def test_perfect_prediction_scores_one():
    segs = [seg(1, [0, 1]), seg(1, [4, 5]), seg(9, [10, 11, 12])]
    rep = panoptic_quality(segs, segs)
    for s in rep.per_class.values():
        assert (s.pq, s.sq, s.rq) == (1.0, 1.0, 1.0)
    assert rep.groups["all"] == {"pq": 1.0, "sq": 1.0, "rq": 1.0}


def test_single_car_at_iou_06():
    p, g = seg(1, range(0, 8)), seg(1, range(2, 10))
    assert len(set(range(0, 8)) & set(range(2, 10))) / 10 == 0.6
    s = panoptic_quality([p], [g]).per_class[1]
    assert (s.pq, s.sq, s.rq) == pytest.approx((0.6, 0.6, 1.0))


def test_stuff_iou_04_strict_vs_dagger():
    p, g = seg(9, range(0, 7)), seg(9, range(3, 10))
    assert panoptic_quality([p], [g], threshold_mode="strict").per_class[9].pq == 0.0
    assert panoptic_quality([p], [g], threshold_mode="pq_dagger").per_class[9].pq == pytest.approx(0.4)
    # things keep the strict rule under the relaxed mode
    assert panoptic_quality([seg(1, range(7))], [seg(1, range(3, 10))], threshold_mode="dagger").per_class[1].pq == 0


def test_relaxed_threshold_mode():
    p, g = seg(1, range(0, 7)), seg(1, range(3, 10))
    assert panoptic_quality([p], [g], threshold_mode="custom", threshold=0.2).per_class[1].pq == pytest.approx(0.4)
    with pytest.raises(ValueError):
        panoptic_quality([p], [g], threshold_mode="loose")


def test_formula_counts():
    preds = [seg(1, [0, 1, 2, 3]), seg(1, [10]), seg(2, [20])]
    gts = [seg(1, [0, 1, 2]), seg(1, [30]), seg(3, [40])]
    rep = panoptic_quality(preds, gts)
    s = rep.per_class[1]
    assert (s.tp, s.fp, s.fn) == (1, 1, 1)
    assert (s.pq, s.sq, s.rq) == pytest.approx(pq_from_counts(0.75, 1, 1, 1))
    assert rep.per_class[2].pq == 0 and rep.per_class[3].pq == 0


def test_group_mean_modes():
    segs = [seg(1, [0]), seg(9, [1])]
    present = panoptic_quality(segs, segs, mean_mode="present")
    assert present.groups["thing"]["pq"] == 1.0 and present.groups["all"]["pq"] == 1.0
    every = panoptic_quality(segs, segs, mean_mode="all")
    assert every.groups["thing"]["pq"] == pytest.approx(1 / 8)
    assert every.groups["stuff"]["pq"] == pytest.approx(1 / 11)
    assert every.groups["all"]["pq"] == pytest.approx(2 / 19)


def test_ssc_hand_confusion_matrix():
    gt = np.array([[0, 0, 1, 1], [9, 9, 1, 1], [9, 9, 9, 0], [255, 13, 13, 0]])[..., None]
    pred = np.array([[0, 1, 1, 1], [9, 9, 0, 1], [9, 13, 9, 0], [1, 13, 0, 9]])[..., None]
    # rows gt, cols pred over {free, car, road, building}, ignore voxel dropped:
    #            free car road bldg
    #   free      2    1   1    0
    #   car       1    3   0    0
    #   road      0    0   4    1
    #   building  1    0   0    1
    iou, miou = ssc_iou_miou(pred, gt)
    assert iou == pytest.approx(9 / 13)
    assert miou == pytest.approx((3 / 5 + 4 / 6 + 1 / 3) / 3)


def test_ssc_trivial_cases():
    g = np.zeros((2, 2, 2), np.int64)
    g[0] = 9
    assert ssc_iou_miou(g, g) == (1.0, 1.0)
    assert ssc_iou_miou(np.zeros_like(g), g)[0] == 0.0
    with pytest.raises(Exception):
        ssc_iou_miou(g, g[:1])


def test_class_absent_from_gt_but_predicted_counts_zero():
    gt = np.full((2, 1, 1), 9)
    pred = np.array([9, 10]).reshape(2, 1, 1)
    _, miou = ssc_iou_miou(pred, gt)
    assert miou == pytest.approx((0.5 + 0.0) / 2)


def test_self_evaluation_and_report_schema():
    _, gt = random_grid_pair(3, (8, 8, 4), 4)
    doc = evaluate(gt, gt).to_json()
    assert doc["all"]["pq"] == 100.0 and doc["pq_dagger"]["all"] == 100.0
    assert set(doc) == {"per_class", "all", "thing", "stuff", "pq_dagger", "iou", "miou"}
    assert all(v == {"pq": 100.0, "sq": 100.0, "rq": 100.0} for v in doc["per_class"].values())


def test_ignored_gt_voxels_do_not_penalise_prediction():
    gt_sem = np.full((4, 1, 1), 9)
    gt_sem[3] = 255
    pred = PanopticGrid.semantic_only(np.full((4, 1, 1), 9))
    rep = evaluate(pred, PanopticGrid.semantic_only(gt_sem))
    assert rep.per_class[9].pq == 1.0 and rep.iou == 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metric_properties(seed):
    pred, gt = random_grid_pair(seed, (8, 8, 4), 5)
    strict = evaluate(pred, gt, mode="strict")
    dagger = evaluate(pred, gt, mode="dagger")
    for cls, s in strict.per_class.items():
        assert 0.0 <= s.pq <= 1.0 and 0.0 <= s.sq <= 1.0 and 0.0 <= s.rq <= 1.0
        if s.tp > 0:
            assert abs(s.pq - s.sq * s.rq) < 1e-9
        d = dagger.per_class[cls]
        if SEMANTIC_KITTI.is_thing(cls):
            assert (d.pq, d.sq, d.rq, d.tp) == (s.pq, s.sq, s.rq, s.tp)
        else:
            assert d.pq >= s.pq
    # consistent instance renaming in both grids leaves every score unchanged
    perm = np.random.default_rng(seed).permutation(np.arange(1, 200))
    rename = np.concatenate([[0], perm])
    renamed = evaluate(PanopticGrid(pred.semantic, rename[pred.instance]),
                       PanopticGrid(gt.semantic, rename[gt.instance]))
    assert renamed.to_json() == strict.to_json()


def test_empty_group_is_undefined_not_zero():
    segs = [seg(1, [0, 1])]
    rep = panoptic_quality(segs, segs)
    assert rep.groups["stuff"] == {"pq": None, "sq": None, "rq": None}
    assert rep.groups["thing"]["pq"] == 1.0
    assert rep.to_json()["stuff"]["pq"] is None
