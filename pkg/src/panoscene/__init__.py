"""Deterministic core of vision-based panoptic scene completion."""
from .attention import (DeformableWeights, DenseAttentionWeights, InstanceSet, deformable_cross_attention,
                        deformable_self_attention, dense_cross_attention, dense_self_attention, encode_instances,
                        init_instance_proposals, init_voxel_proposals)
from .cluster import ClusterParams, dbscan, instances_from_ssc
from .decode import AffinityVolume, PanopticGrid, affinity_scores, panoptic_aggregate
from .geometry import (CameraModel, DepthMap, GridSpec, lift_features, unproject_depth, upsample_trilinear,
                       visibility_split, voxelize)
from .matching import MatchReport, Segment, hungarian_assign, mask_iou, match_segments
from .metrics import SEMANTIC_KITTI, ClassTaxonomy, MetricsReport, evaluate, panoptic_quality, segments_from_grid, \
    ssc_iou_miou
from .tensor import ShapeError, argmax_lastdim, as_tensor, softmax_lastdim, trilinear_sample

__version__ = "0.1.0"

__all__ = [
    "DeformableWeights", "DenseAttentionWeights", "InstanceSet", "deformable_cross_attention",
    "deformable_self_attention", "dense_cross_attention", "dense_self_attention", "encode_instances",
    "init_instance_proposals", "init_voxel_proposals", "ClusterParams", "dbscan", "instances_from_ssc",
    "AffinityVolume", "PanopticGrid", "affinity_scores", "panoptic_aggregate", "CameraModel", "DepthMap",
    "GridSpec", "lift_features", "unproject_depth", "upsample_trilinear", "visibility_split", "voxelize",
    "MatchReport", "Segment", "hungarian_assign", "mask_iou", "match_segments", "SEMANTIC_KITTI",
    "ClassTaxonomy", "MetricsReport", "evaluate", "panoptic_quality", "segments_from_grid", "ssc_iou_miou",
    "ShapeError", "argmax_lastdim", "as_tensor", "softmax_lastdim", "trilinear_sample",
]
