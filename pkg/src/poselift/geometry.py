"""Camera geometry: pinhole and weak-perspective projection, closed-form global
translation from 2D/3D correspondences, and horizontal perspective correction.

All formulas work on pixel coordinates shifted by the principal point; the
public functions take raw pixels plus :class:`CameraIntrinsics`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateSpread,
    InvariantViolation,
    NonPositiveDepth,
    SkeletonMismatch,
    WrongFrame,
)
from .poses import Frame, Pose2D, Pose3D, check_on_tree
from .skeleton import KinematicTree

SPREAD_EPS = 1e-6


class DepthMode(str, enum.Enum):
    EXACT = "exact"
    APPROX = "approx"


class CorrectionSource(str, enum.Enum):
    CENTROID = "centroid"
    CROP = "crop"
    OFF = "off"


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    principal_point: tuple[float, float]
    image_size: tuple[int, int]

    def __post_init__(self):
        if not (np.isfinite(self.f) and self.f > 0):
            raise InvariantViolation(f"focal length must be > 0, got {self.f}")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise InvariantViolation(f"image size must be positive, got {self.image_size}")
        object.__setattr__(self, "principal_point", tuple(float(c) for c in self.principal_point))

    @property
    def pp(self) -> np.ndarray:
        return np.asarray(self.principal_point)


@dataclass(frozen=True)
class CropBox:
    center: tuple[float, float]
    width: float
    height: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvariantViolation(f"crop extent must be positive, got {self.width}x{self.height}")

    def check_inside(self, cam: CameraIntrinsics) -> None:
        u, v = self.center
        w, h = cam.image_size
        if not (0 <= u <= w and 0 <= v <= h):
            raise InvariantViolation(f"crop center {self.center} outside the {w}x{h} image")


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise InvariantViolation(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0):
            raise InvariantViolation("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InvariantViolation("rotation has det != +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))


def rotation_about_up(angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians about the camera y axis.

    Maps the optical axis (0, 0, 1) to (sin a, 0, cos a), i.e. it turns a
    camera looking straight ahead toward image column ``cx + f tan a``.
    """
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def pinhole_project(point, cam: CameraIntrinsics) -> np.ndarray:
    """Full perspective projection of one point or an ``(N, 3)`` array."""
    p = np.asarray(point, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCamera(f"point(s) with z <= 0: min z = {np.min(z)}")
    return cam.f * p[..., :2] / z[..., None] + cam.pp


def weak_perspective_project(pose: Pose3D, T, cam: CameraIntrinsics) -> Pose2D:
    """Project ``pose + T`` with a uniform scale ``f / T.z``."""
    if pose.frame != Frame.ROOT_RELATIVE:
        raise WrongFrame("weak-perspective projection expects a root-relative pose")
    T = np.asarray(T, dtype=np.float64)
    if T[2] <= 0:
        raise BehindCamera(f"reference depth must be > 0, got {T[2]}")
    pts = cam.f / T[2] * (pose.joints[:, :2] + T[:2]) + cam.pp
    return Pose2D(pts, pose.skeleton_id)


# Core solvers on centered arrays -------------------------------------------

def _depth_from_arrays(P: np.ndarray, K: np.ndarray, f: float, mode: DepthMode) -> float:
    """``P``: (J, 3) mm, ``K``: (J, 2) principal-point-shifted pixels."""
    dP = P[:, :2] - P[:, :2].mean(axis=0)
    dK = K - K.mean(axis=0)
    sp = float(np.sum(dP * dP))
    sk = float(np.sum(dK * dK))
    if sp < SPREAD_EPS:
        raise DegenerateSpread(f"3D xy spread {sp:.3g} mm^2 is below {SPREAD_EPS}")
    if sk < SPREAD_EPS:
        raise DegenerateSpread(f"2D spread {sk:.3g} px^2 is below {SPREAD_EPS}")
    if DepthMode(mode) is DepthMode.APPROX:
        return f * np.sqrt(sp / sk)
    cross = float(np.sum(dK * dP))
    if cross <= 0:
        raise NonPositiveDepth(f"2D/3D correspondence is anti-correlated (sum = {cross:.3g})")
    return f * sp / cross


def _translation_from_arrays(P: np.ndarray, K: np.ndarray, f: float, mode: DepthMode) -> np.ndarray:
    z = _depth_from_arrays(P, K, f, mode)
    xy = K.mean(axis=0) * (z / f) - P[:, :2].mean(axis=0)
    return np.array([xy[0], xy[1], z])


def _check_pair(pose: Pose3D, k2d: Pose2D) -> None:
    if pose.frame != Frame.ROOT_RELATIVE:
        raise WrongFrame("translation estimation expects a root-relative pose")
    if pose.skeleton_id != k2d.skeleton_id or pose.n_joints != k2d.n_joints:
        raise SkeletonMismatch(f"3D pose ({pose.skeleton_id!r}, {pose.n_joints} joints) and "
                               f"2D keypoints ({k2d.skeleton_id!r}, {k2d.n_joints}) disagree")


def estimate_depth(pose: Pose3D, k2d: Pose2D, cam: CameraIntrinsics,
                   mode: DepthMode | str = DepthMode.EXACT) -> float:
    """Subject depth in mm from a root-relative pose and its 2D keypoints.

    ``exact`` is the stationary point of the weak-perspective reprojection
    error; ``approx`` replaces the 2D/3D inner product by the product of norms,
    which is what you get when the two centered point sets are parallel.
    """
    _check_pair(pose, k2d)
    return _depth_from_arrays(pose.joints, k2d.points - cam.pp, cam.f, DepthMode(mode))


def estimate_global_translation(pose: Pose3D, k2d: Pose2D, cam: CameraIntrinsics,
                                mode: DepthMode | str = DepthMode.EXACT) -> np.ndarray:
    """Translation ``T`` (mm) placing ``pose`` so that it reprojects onto ``k2d``."""
    _check_pair(pose, k2d)
    return _translation_from_arrays(pose.joints, k2d.points - cam.pp, cam.f, DepthMode(mode))


def reprojection_energy(T, pose: Pose3D, k2d: Pose2D, cam: CameraIntrinsics) -> float:
    """Sum of squared weak-perspective residuals for translation ``T``."""
    T = np.asarray(T, dtype=np.float64)
    K = k2d.points - cam.pp
    r = K - cam.f / T[2] * (pose.joints[:, :2] + T[:2])
    return float(np.sum(r * r))


def perspective_correction(source: Pose2D | CropBox, cam: CameraIntrinsics) -> RigidTransform:
    """Rotation from the virtual (crop-facing) camera to the original camera.

    Only the horizontal offset of the view direction is compensated, so
    vertical offsets never change the result.
    """
    if isinstance(source, CropBox):
        source.check_inside(cam)
        u = source.center[0]
    else:
        u = float(source.points[:, 0].mean())
    du = u - cam.principal_point[0]
    if du == 0.0:
        return RigidTransform.identity()
    return RigidTransform(rotation_about_up(np.arctan2(du, cam.f)), np.zeros(3))


def compose_global(transform: RigidTransform, T, pose: Pose3D) -> Pose3D:
    """``R @ p + t + T`` for every joint; yields a camera-space pose."""
    if pose.frame != Frame.ROOT_RELATIVE:
        raise WrongFrame("compose_global expects a root-relative pose")
    t = transform.translation + np.asarray(T, dtype=np.float64)
    return Pose3D(pose.joints @ transform.rotation.T + t, Frame.CAMERA_GLOBAL, pose.skeleton_id)


def to_virtual_view(k2d: Pose2D, rotation: np.ndarray, cam: CameraIntrinsics) -> Pose2D:
    """Re-image keypoints in a camera rotated by ``rotation`` about the same center."""
    K = k2d.points - cam.pp
    rays = np.column_stack([K, np.full(len(K), cam.f)]) @ rotation  # R^T d, row-wise
    if np.any(rays[:, 2] <= 0):
        raise BehindCamera("keypoint ray points behind the virtual camera")
    return Pose2D(cam.f * rays[:, :2] / rays[:, 2:] + cam.pp, k2d.skeleton_id)


def lift_to_global(pose: Pose3D, k2d: Pose2D, cam: CameraIntrinsics,
                   mode: DepthMode | str = DepthMode.EXACT,
                   correction: CorrectionSource | str = CorrectionSource.CENTROID,
                   crop: CropBox | None = None,
                   tree: KinematicTree | None = None) -> tuple[Pose3D, RigidTransform]:
    """Full global reconstruction of one frame.

    The pose is predicted in the view of a virtual camera turned toward the
    subject. The translation is solved in that view (keypoints re-imaged into
    it, where the subject is near the optical axis and weak perspective is
    accurate) and the result is rotated back: ``P_G = R (P + T_v)``.

    Returns the global pose and the ``(R | R T_v)`` transform applied.
    """
    if tree is not None:
        check_on_tree(pose, tree, Frame.ROOT_RELATIVE)
    correction = CorrectionSource(correction)
    if correction is CorrectionSource.OFF:
        rot = RigidTransform.identity()
    elif correction is CorrectionSource.CROP:
        if crop is None:
            crop = keypoint_bbox(k2d)
        rot = perspective_correction(crop, cam)
    else:
        rot = perspective_correction(k2d, cam)
    R = rot.rotation
    k_virtual = k2d if correction is CorrectionSource.OFF else to_virtual_view(k2d, R, cam)
    T_v = estimate_global_translation(pose, k_virtual, cam, mode)
    full = RigidTransform(R, R @ T_v)
    return compose_global(full, np.zeros(3), pose), full


def keypoint_bbox(k2d: Pose2D) -> CropBox:
    lo = k2d.points.min(axis=0)
    hi = k2d.points.max(axis=0)
    size = np.maximum(hi - lo, 1.0)
    c = (lo + hi) / 2
    return CropBox((float(c[0]), float(c[1])), float(size[0]), float(size[1]))


def reprojection_error(pose: Pose3D, k2d: Pose2D, cam: CameraIntrinsics) -> float:
    """Mean pinhole reprojection distance in pixels of a camera-space pose."""
    return float(np.linalg.norm(pinhole_project(pose.joints, cam) - k2d.points, axis=1).mean())
