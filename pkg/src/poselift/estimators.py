"""scikit-learn compatible wrappers around the functional core.

All estimators take pose arrays shaped ``(n_samples, J, 3)`` (or flattened
``(n_samples, 3J)``) and follow the usual ``fit`` / ``predict`` /
``transform`` contract, so they drop into pipelines and ``clone``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import analysis, geometry, metrics
from .errors import InsufficientFrames, ShapeMismatch
from .poses import Frame, Pose2D, Pose3D
from .representations import decode_array, fit_fusion_weights_array
from .skeleton import KinematicTree
from .validation import check_estimates, check_poses


class PoseKMeans(ClusterMixin, BaseEstimator):
    """Seeded Lloyd K-means over flattened root-relative poses."""

    def __init__(self, n_clusters=analysis.DEFAULT_K, seed=0,
                 max_iter=analysis.DEFAULT_MAX_ITERS, tol=analysis.DEFAULT_TOL):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        P = check_poses(X)
        C, labels, inertia, hist, n_iter = analysis.kmeans_array(
            P.reshape(len(P), -1), self.n_clusters, self.seed, self.max_iter, self.tol)
        self.n_joints_ = P.shape[1]
        self.cluster_centers_ = C
        self.labels_ = labels
        self.inertia_ = inertia
        self.inertia_history_ = hist
        self.n_iter_ = n_iter
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        P = check_poses(X, self.n_joints_)
        return analysis._sq_dists(P.reshape(len(P), -1), self.cluster_centers_).argmin(axis=1)


class SkeletonRetargeter(RegressorMixin, BaseEstimator):
    """Linear joint map from one skeleton convention to another."""

    def __init__(self, ridge_lambda=0.0, affine=False):
        self.ridge_lambda = ridge_lambda
        self.affine = affine

    def fit(self, X, y):
        S = check_poses(X)
        T = check_poses(y)
        if len(S) != len(T):
            raise ShapeMismatch(f"{len(S)} source vs {len(T)} target frames")
        J = S.shape[1] + (1 if self.affine else 0)
        if self.ridge_lambda == 0 and len(S) < J:
            raise InsufficientFrames(f"{len(S)} frames; need at least {J} without ridge")
        cols_s = np.concatenate(list(S), axis=1)
        cols_t = np.concatenate(list(T), axis=1)
        self.matrix_ = analysis.fit_retarget_array(cols_s, cols_t, self.ridge_lambda, self.affine)
        self.n_joints_in_ = S.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "matrix_")
        P = check_poses(X, self.n_joints_in_)
        rmap = analysis.RetargetMap(self.matrix_, "source", "target", self.affine)
        return rmap.apply_array(P)

    def score(self, X, y, sample_weight=None):
        """Negative mean per-joint position error (higher is better)."""
        T = check_poses(y)
        return -float(metrics.joint_errors(self.predict(X), T).mean())


class PoseFusionRegressor(RegressorMixin, BaseEstimator):
    """Per-joint affine fusion of P / O1 / O2 estimates.

    ``X`` holds already decoded estimates, shape ``(n, 3, J, 3)``; use
    :meth:`stack_encodings` to build it from raw relative encodings.
    """

    def __init__(self, ridge_lambda=0.0):
        self.ridge_lambda = ridge_lambda

    @staticmethod
    def stack_encodings(p, o1, o2, tree: KinematicTree) -> np.ndarray:
        p = check_poses(p, tree.n_joints)
        d1 = decode_array(check_poses(o1, tree.n_joints), tree, 1)
        d2 = decode_array(check_poses(o2, tree.n_joints), tree, 2)
        return np.stack([p, d1, d2], axis=1)

    def fit(self, X, y):
        E = check_estimates(X)
        Y = check_poses(y, E.shape[2])
        self.weights_ = fit_fusion_weights_array(E, Y, self.ridge_lambda)
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        E = check_estimates(X, self.weights_.shape[0])
        return np.einsum("jm,nmjc->njc", self.weights_, E)

    def score(self, X, y, sample_weight=None):
        """Negative mean per-joint position error (higher is better)."""
        return -float(metrics.joint_errors(self.predict(X), check_poses(y)).mean())


class GlobalPoseLifter(TransformerMixin, BaseEstimator):
    """Places root-relative poses in camera space from their 2D keypoints.

    Stateless: ``fit`` only validates parameters. ``transform`` needs the
    keypoints for every pose, passed as ``keypoints=``.
    """

    def __init__(self, focal_length=1000.0, principal_point=(0.0, 0.0),
                 image_size=(1920, 1080), depth_mode="exact", correction="centroid"):
        self.focal_length = focal_length
        self.principal_point = principal_point
        self.image_size = image_size
        self.depth_mode = depth_mode
        self.correction = correction

    def _camera(self):
        return geometry.CameraIntrinsics(float(self.focal_length), tuple(self.principal_point),
                                         tuple(self.image_size))

    def fit(self, X=None, y=None):
        self._camera()
        geometry.DepthMode(self.depth_mode)
        geometry.CorrectionSource(self.correction)
        self.fitted_ = True
        return self

    def transform(self, X, keypoints=None):
        if keypoints is None:
            raise ValueError("GlobalPoseLifter.transform needs keypoints=")
        P = check_poses(X)
        K = check_poses(keypoints, P.shape[1], dims=2)
        if len(K) != len(P):
            raise ShapeMismatch(f"{len(P)} poses vs {len(K)} keypoint sets")
        cam = self._camera()
        out = np.empty_like(P)
        for i in range(len(P)):
            g, _ = geometry.lift_to_global(Pose3D(P[i], Frame.ROOT_RELATIVE, "-"),
                                           Pose2D(K[i], "-"), cam, self.depth_mode,
                                           self.correction)
            out[i] = g.joints
        return out
