import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panoscene.cluster import NOISE, ClusterParams, dbscan, instances_from_ssc, region_queries
from panoscene.decode import PanopticGrid
from panoscene.geometry import GridSpec
from panoscene.oracles import canonical_partition, naive_dbscan
from panoscene.synthetic import blob_scene

FINE = GridSpec((24, 24, 8), 0.2)


def test_params_validation():
    with pytest.raises(ValueError):
        ClusterParams(eps=0.0)
    with pytest.raises(ValueError):
        ClusterParams(min_pts=0)
    with pytest.raises(ValueError):
        ClusterParams(eps_units="feet")


def test_coincident_points_form_one_cluster():
    assert dbscan(np.ones((8, 3)), 1.0, 8).tolist() == [0] * 8


def test_isolated_points_are_noise():
    assert dbscan([[0, 0, 0], [10, 10, 10]], 1.0, 8).tolist() == [NOISE, NOISE]
    assert dbscan(np.zeros((0, 3))).size == 0


def test_neighbourhood_is_closed():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    assert [nb.tolist() for nb in region_queries(pts, 1.0)] == [[0, 1], [0, 1]]
    assert dbscan(pts, 1.0, 2).tolist() == [0, 0]
    assert dbscan(pts, 0.999, 2).tolist() == [NOISE, NOISE]


def test_border_point_joins_first_cluster_in_scan_order():
    # cores at x=0 and x=2 (min_pts 4) share the border point at x=1, which has only 3 neighbours
    right = [[2.0 + 0.1 * i, 0, 0] for i in range(4)]
    left = [[-0.1 * i, 0, 0] for i in range(4)]
    pts = np.array([[1.0, 0, 0]] + right + left)
    labels = dbscan(pts, 1.0, 4)
    assert len(region_queries(pts, 1.0)[0]) == 3
    assert labels.tolist() == [0, 1, 1, 1, 1, 0, 0, 0, 0]


def test_matches_naive_reference(rng):
    for _ in range(5):
        pts = rng.uniform(0, 6, (300, 3))
        got = dbscan(pts, 1.0, 8)
        ref = naive_dbscan(pts, 1.0, 8)
        assert canonical_partition(got) == canonical_partition(ref)
        np.testing.assert_array_equal(got, ref)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 4, (int(rng.integers(1, 120)), 3))
    perm = rng.permutation(len(pts))
    a = dbscan(pts, 1.0, 5)
    b = dbscan(pts[perm], 1.0, 5)
    np.testing.assert_array_equal(a[perm], b)
    # a cluster may end up smaller than min_pts when earlier clusters claimed its border
    # points, but it always holds a core point whose whole neighbourhood is clustered
    nbrs = region_queries(pts, 1.0)
    for lab in set(a.tolist()) - {NOISE}:
        cores = [i for i in np.flatnonzero(a == lab) if len(nbrs[i]) >= 5]
        assert cores and all(np.all(a[nbrs[i]] != NOISE) for i in cores)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lattice_points_match_naive(seed):
    rng = np.random.default_rng(seed)
    pts = np.unique(rng.integers(0, 6, (int(rng.integers(5, 150)), 3)), axis=0).astype(float)
    assert canonical_partition(dbscan(pts, 1.5, 4)) == canonical_partition(naive_dbscan(pts, 1.5, 4))


def test_two_blobs_become_two_instances():
    scene = blob_scene()
    out = instances_from_ssc(scene, FINE, ClusterParams(1.0, 8), thing_classes=[1])
    ids = np.unique(out.instance[out.instance > 0])
    assert ids.tolist() == [1, 2]
    np.testing.assert_array_equal(out.semantic, scene.semantic)
    assert np.all(out.instance[scene.semantic == 9] == 0)
    # same answer from the point-level reference on metric voxel centres
    idx = np.argwhere(scene.semantic == 1)
    ref = naive_dbscan(FINE.voxel_centers(idx), 1.0 * (1 + 1e-6), 8)
    assert canonical_partition(out.instance[tuple(idx.T)].astype(int) - 1) == canonical_partition(ref)


def test_small_blob_is_noise():
    sem = np.zeros((6, 6, 8), np.int64)
    sem[0, 0, :7] = 1
    out = instances_from_ssc(PanopticGrid.semantic_only(sem), GridSpec((6, 6, 8), 1.0),
                             ClusterParams(1.0, 8, "voxels"), [1])
    assert not out.instance.any()
    assert np.sum(out.semantic == 1) == 7


def test_empty_thing_set_is_passthrough():
    scene = blob_scene()
    out = instances_from_ssc(scene, FINE, None, [])
    assert out == PanopticGrid.semantic_only(scene.semantic)


def test_ids_unique_across_classes():
    sem = blob_scene(gap=10).semantic.astype(np.int64)
    sem[12:15, 2:5, 1:4] = 6
    out = instances_from_ssc(sem, FINE, ClusterParams(), [1, 6])
    assert np.unique(out.instance[sem == 1]).tolist() == [1]
    assert np.unique(out.instance[sem == 6]).tolist() == [2]


def test_meter_eps_survives_f32_voxel_size():
    # 0.2 stored as f32 is 0.2000000029; 1 m must still reach exactly 5 voxels
    sem = np.zeros((12, 1, 1), np.int64)
    sem[0, 0, 0] = sem[5, 0, 0] = 1
    grid = GridSpec((12, 1, 1), float(np.float32(0.2)))
    out = instances_from_ssc(sem, grid, ClusterParams(1.0, 2), [1])
    assert out.instance[0, 0, 0] == out.instance[5, 0, 0] == 1
