"""Non-neural core of a class-balanced, structure-aware LiDAR 3D detection pipeline."""

from .classes import CLASS_NAMES, DEFAULT_GROUPS
from .config import PipelineConfig, load_config
from .evaluation import EvalConfig, EvalReport, average_precision, evaluate, match, nds, tp_metrics
from .geometry import (
    Box3D,
    aligned_iou_3d,
    bev_iou,
    center_distance_2d,
    point_in_box,
    points_in_box,
    yaw_diff,
)
from .interp import FeatureCloud, InterpConfig, interpolate, multi_stage_interpolate
from .losses import (
    AuxTargets,
    LossWeights,
    box_reg_loss,
    cls_focal_loss,
    ctr_loss,
    joint_loss,
    make_aux_targets,
    orient_ce_loss,
    seg_loss,
    smooth_l1,
)
from .nms import NmsConfig, multi_group_nms, nms
from .pointcloud import AugmentConfig, PointCloud, Sweep, SweepSet, aggregate_sweeps, augment
from .sampling import (
    GroupMap,
    build_gt_database,
    build_histogram,
    ds_sample_plan,
    group_of,
    gt_aug,
    split_by_group,
)
from .voxel import VoxelConfig, VoxelGrid, downsample, voxel_index_to_world, voxelize

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "DEFAULT_GROUPS",
    "PipelineConfig",
    "load_config",
    "EvalConfig",
    "EvalReport",
    "average_precision",
    "evaluate",
    "match",
    "nds",
    "tp_metrics",
    "Box3D",
    "aligned_iou_3d",
    "bev_iou",
    "center_distance_2d",
    "point_in_box",
    "points_in_box",
    "yaw_diff",
    "FeatureCloud",
    "InterpConfig",
    "interpolate",
    "multi_stage_interpolate",
    "AuxTargets",
    "LossWeights",
    "box_reg_loss",
    "cls_focal_loss",
    "ctr_loss",
    "joint_loss",
    "make_aux_targets",
    "orient_ce_loss",
    "seg_loss",
    "smooth_l1",
    "NmsConfig",
    "multi_group_nms",
    "nms",
    "AugmentConfig",
    "PointCloud",
    "Sweep",
    "SweepSet",
    "aggregate_sweeps",
    "augment",
    "GroupMap",
    "build_gt_database",
    "build_histogram",
    "ds_sample_plan",
    "group_of",
    "gt_aug",
    "split_by_group",
    "VoxelConfig",
    "VoxelGrid",
    "downsample",
    "voxel_index_to_world",
    "voxelize",
]
