"""Root-relative (P), parent-relative (O1) and grandparent-relative (O2) pose
encodings, and per-joint affine fusion of the three decoded estimates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientSamples,
    InvariantViolation,
    NonAffineWeights,
    SkeletonMismatch,
    WrongFrame,
)
from .poses import Frame, Pose3D, _frozen_array, check_on_tree
from .skeleton import KinematicTree

AFFINE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RelPose:
    """Per-joint offsets to the order-1 or order-2 ancestor."""

    deltas: np.ndarray
    order: int
    skeleton_id: str

    def __post_init__(self):
        object.__setattr__(self, "deltas", _frozen_array(self.deltas, 3, "RelPose deltas"))
        if self.order not in (1, 2):
            raise InvariantViolation(f"order must be 1 or 2, got {self.order!r}")


@dataclass(frozen=True, eq=False)
class FusionWeights:
    """Per-joint weights for the (P, O1, O2) decoded estimates; rows sum to one."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] != 3:
            raise NonAffineWeights(f"weights must be J x 3, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise NonAffineWeights("weights contain non-finite values")
        bad = np.flatnonzero(np.abs(w.sum(axis=1) - 1.0) > AFFINE_TOL)
        if bad.size:
            raise NonAffineWeights(f"row {bad[0]} sums to {w[bad[0]].sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, n_joints: int) -> FusionWeights:
        return cls(np.full((n_joints, 3), 1.0 / 3.0))

    @classmethod
    def root_only(cls, n_joints: int) -> FusionWeights:
        return cls(np.tile([1.0, 0.0, 0.0], (n_joints, 1)))


# Array-level kernels; they accept any leading batch shape (..., J, 3).

def encode_array(joints: np.ndarray, parents: np.ndarray) -> np.ndarray:
    return joints - joints[..., parents, :]


def decode_array(deltas: np.ndarray, tree: KinematicTree, order: int) -> np.ndarray:
    parents = tree.parents(order)
    out = np.zeros_like(deltas, dtype=np.float64)
    depth = tree.depth
    for d in range(1, int(depth.max()) + 1):
        idx = np.flatnonzero(depth == d)
        out[..., idx, :] = deltas[..., idx, :] + out[..., parents[idx], :]
    return out


def to_root_relative(pose: Pose3D, tree: KinematicTree) -> Pose3D:
    """Shift a camera-space pose so that its root sits at the origin."""
    check_on_tree(pose, tree, Frame.CAMERA_GLOBAL)
    j = pose.joints
    return Pose3D(j - j[tree.root], Frame.ROOT_RELATIVE, pose.skeleton_id)


def encode_relative(pose: Pose3D, tree: KinematicTree, order: int) -> RelPose:
    check_on_tree(pose, tree, Frame.ROOT_RELATIVE)
    return RelPose(encode_array(pose.joints, tree.parents(order)), order, pose.skeleton_id)


def decode_relative(rel: RelPose, tree: KinematicTree) -> Pose3D:
    """Rebuild the root-relative pose by accumulating offsets down the tree."""
    if rel.skeleton_id != tree.skeleton_id or rel.deltas.shape[0] != tree.n_joints:
        raise SkeletonMismatch(
            f"relative pose on {rel.skeleton_id!r} ({rel.deltas.shape[0]} joints) "
            f"does not match tree {tree.skeleton_id!r} ({tree.n_joints} joints)")
    if np.any(rel.deltas[tree.root] != 0.0):
        raise InvariantViolation("relative pose has a non-zero root offset")
    return Pose3D(decode_array(rel.deltas, tree, rel.order), Frame.ROOT_RELATIVE, rel.skeleton_id)


def _decoded_triple(p: Pose3D, o1: RelPose, o2: RelPose, tree: KinematicTree) -> np.ndarray:
    check_on_tree(p, tree, Frame.ROOT_RELATIVE)
    if o1.order != 1 or o2.order != 2:
        raise WrongFrame(f"expected orders (1, 2), got ({o1.order}, {o2.order})")
    return np.stack([p.joints, decode_relative(o1, tree).joints, decode_relative(o2, tree).joints])


def fuse(p: Pose3D, o1: RelPose, o2: RelPose, weights: FusionWeights,
         tree: KinematicTree) -> Pose3D:
    """Per-joint affine combination of the three decoded estimates."""
    est = _decoded_triple(p, o1, o2, tree)
    if weights.w.shape[0] != tree.n_joints:
        raise SkeletonMismatch(f"weights have {weights.w.shape[0]} rows for {tree.n_joints} joints")
    fused = np.einsum("jm,mjc->jc", weights.w, est)
    fused[tree.root] = 0.0
    return Pose3D(fused, Frame.ROOT_RELATIVE, p.skeleton_id)


# Orthonormal basis of the sum-zero plane in R^3. Writing w = 1/3 + N z keeps
# every row affine, and ||w - 1/3||^2 == ||z||^2 makes the ridge pull toward
# uniform weights.
_SUM_ZERO_BASIS = np.array([
    [1.0 / np.sqrt(2.0), 1.0 / np.sqrt(6.0)],
    [-1.0 / np.sqrt(2.0), 1.0 / np.sqrt(6.0)],
    [0.0, -2.0 / np.sqrt(6.0)],
])


def fit_fusion_weights_array(estimates: np.ndarray, truth: np.ndarray,
                             ridge_lambda: float = 0.0) -> np.ndarray:
    """Fit weights from decoded estimates ``(n, 3, J, 3)`` and truth ``(n, J, 3)``.

    Returns a ``(J, 3)`` array. Joints whose estimates carry no information
    (e.g. the root, always zero) keep the uniform weights.
    """
    if ridge_lambda < 0:
        raise ValueError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
    n, _, J, _ = estimates.shape
    if n < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {n}")
    u = np.full(3, 1.0 / 3.0)
    out = np.empty((J, 3))
    for j in range(J):
        # rows: (sample, coord); columns: mode
        A = estimates[:, :, j, :].transpose(0, 2, 1).reshape(-1, 3)
        y = truth[:, j, :].reshape(-1)
        B = A @ _SUM_ZERO_BASIS
        r0 = y - A @ u
        if ridge_lambda > 0:
            B = np.vstack([B, np.sqrt(ridge_lambda) * np.eye(2)])
            r0 = np.concatenate([r0, np.zeros(2)])
        z, *_ = np.linalg.lstsq(B, r0, rcond=None)
        w = u + _SUM_ZERO_BASIS @ z
        out[j] = w / w.sum()
    return out


def fit_fusion_weights(samples, tree: KinematicTree, ridge_lambda: float = 0.0) -> FusionWeights:
    """Least-squares affine fusion weights per joint.

    Args:
        samples: sequence of ``(p, o1, o2, ground_truth)`` tuples.
        tree: skeleton shared by every sample.
        ridge_lambda: strength of the pull toward uniform ``(1/3, 1/3, 1/3)``.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {len(samples)}")
    est = []
    truth = []
    for p, o1, o2, gt in samples:
        est.append(_decoded_triple(p, o1, o2, tree))
        check_on_tree(gt, tree, Frame.ROOT_RELATIVE)
        truth.append(gt.joints)
    w = fit_fusion_weights_array(np.stack(est), np.stack(truth), ridge_lambda)
    return FusionWeights(w)
