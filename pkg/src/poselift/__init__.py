"""Monocular 3D pose toolkit: skeleton encodings, closed-form global
localization, evaluation metrics, pose clustering, retargeting and
chroma-key augmentation."""
from .analysis import (
    PoseClusters,
    RetargetMap,
    apply_retarget_map,
    assign_classes,
    fit_retarget_map,
    kmeans_poses,
)
from .augment import AugmentPlan, MaskSet, Tier, composite, plan_augmentation, shading_surrogate
from .estimators import GlobalPoseLifter, PoseFusionRegressor, PoseKMeans, SkeletonRetargeter
from .geometry import (
    CameraIntrinsics,
    CorrectionSource,
    CropBox,
    DepthMode,
    RigidTransform,
    compose_global,
    estimate_depth,
    estimate_global_translation,
    lift_to_global,
    perspective_correction,
    pinhole_project,
    weak_perspective_project,
)
from .metrics import (
    AlignMode,
    EvalConfig,
    EvalReport,
    FrameLabels,
    PckCurve,
    align,
    auc,
    evaluate,
    mpjpe,
    pck3d,
    pck_curve,
)
from .poses import Frame, Pose2D, Pose3D
from .representations import (
    FusionWeights,
    RelPose,
    decode_relative,
    encode_relative,
    fit_fusion_weights,
    fuse,
    to_root_relative,
)
from .skeleton import KinematicTree, SkeletonDef, build_skeleton, default_tree, load_skeleton

__version__ = "0.1.0"
