"""Immutable pose value types.

Units: 3D joints in millimeters, 2D keypoints in pixels. Camera convention is
right-handed with x right, y down and z forward; camera-up is -y.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolation, SkeletonMismatch, WrongFrame
from .skeleton import KinematicTree


class Frame(str, enum.Enum):
    ROOT_RELATIVE = "root_relative"
    CAMERA_GLOBAL = "camera_global"


def _frozen_array(values, dims: int, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != dims:
        raise InvariantViolation(f"{what} must be a J x {dims} array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvariantViolation(f"{what} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pose3D:
    joints: np.ndarray
    frame: Frame
    skeleton_id: str

    def __post_init__(self):
        object.__setattr__(self, "joints", _frozen_array(self.joints, 3, "Pose3D joints"))
        object.__setattr__(self, "frame", Frame(self.frame))

    @property
    def n_joints(self) -> int:
        return self.joints.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Pose3D):
            return NotImplemented
        return (self.frame == other.frame and self.skeleton_id == other.skeleton_id
                and np.array_equal(self.joints, other.joints))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Pose2D:
    points: np.ndarray
    skeleton_id: str

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen_array(self.points, 2, "Pose2D points"))

    @property
    def n_joints(self) -> int:
        return self.points.shape[0]


def check_on_tree(pose: Pose3D, tree: KinematicTree, frame: Frame | None = None) -> None:
    """Raise unless ``pose`` belongs to ``tree`` (and, optionally, is in ``frame``)."""
    if pose.skeleton_id != tree.skeleton_id or pose.n_joints != tree.n_joints:
        raise SkeletonMismatch(
            f"pose is on skeleton {pose.skeleton_id!r} with {pose.n_joints} joints, "
            f"tree is {tree.skeleton_id!r} with {tree.n_joints}")
    if frame is not None and pose.frame != frame:
        raise WrongFrame(f"expected a {frame.value} pose, got {pose.frame.value}")
    if pose.frame == Frame.ROOT_RELATIVE and np.any(pose.joints[tree.root] != 0.0):
        raise InvariantViolation("root-relative pose has a non-zero root joint")
