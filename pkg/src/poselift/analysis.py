"""Pose clustering (seeded Lloyd K-means) and linear skeleton retargeting."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    IncompleteMap,
    InsufficientFrames,
    RankDeficient,
    ShapeMismatch,
    SkeletonMismatch,
    TooFewPoses,
)
from .poses import Pose3D

DEFAULT_K = 20
DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITERS = 300


@dataclass(eq=False)
class PoseClusters:
    k: int
    seed: int
    centroids: np.ndarray          # (k, 3J), flattened root-relative poses
    assignments: np.ndarray        # (n,) cluster id per input pose
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0
    class_map: dict[int, str] | None = None

    def classes(self) -> list[str]:
        """Class label of every input pose (requires :func:`assign_classes`)."""
        if self.class_map is None:
            raise IncompleteMap("no class map attached")
        return [self.class_map[int(c)] for c in self.assignments]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # direct differences, not the expanded |x|^2 - 2xc + |c|^2 form, so
    # identical points get exactly zero distance
    d = X[:, None, :] - C[None, :, :]
    return np.einsum("nkd,nkd->nk", d, d)


def _seed_centroids(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new center drawn with probability ~ D(x)^2."""
    n = len(X)
    centers = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[centers]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a center; take any unused one
            unused = np.setdiff1d(np.arange(n), centers)
            nxt = int(unused[rng.integers(len(unused))])
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        centers.append(nxt)
        d2 = np.minimum(d2, _sq_dists(X, X[[nxt]])[:, 0])
    return X[centers].copy()


def kmeans_array(X: np.ndarray, k: int, seed: int = 0, max_iters: int = DEFAULT_MAX_ITERS,
                 tol: float = DEFAULT_TOL):
    """Lloyd iterations on rows of ``X``.

    Returns ``(centroids, labels, inertia, history, n_iter)``. ``history``
    holds the inertia measured after every assignment step.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise TooFewPoses(f"{n} poses for k={k}")
    rng = np.random.default_rng(seed)
    C = _seed_centroids(X, k, rng)
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        d = _sq_dists(X, C)
        labels = d.argmin(axis=1)
        point_cost = d[np.arange(n), labels]
        history.append(float(point_cost.sum()))

        counts = np.bincount(labels, minlength=k)
        new_C = np.zeros_like(C)
        np.add.at(new_C, labels, X)
        nonempty = counts > 0
        new_C[nonempty] /= counts[nonempty, None]
        taken: set[int] = set()
        for c in np.flatnonzero(~nonempty):
            # empty cluster: restart it on the point worst served by its centroid
            order = np.argsort(-point_cost, kind="stable")
            pick = next(int(i) for i in order if int(i) not in taken)
            taken.add(pick)
            new_C[c] = X[pick]
            point_cost[pick] = 0.0

        shift = float(np.sqrt(((new_C - C) ** 2).sum(axis=1).max()))
        C = new_C
        if shift < tol:
            break

    d = _sq_dists(X, C)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(n), labels].sum())
    history.append(inertia)
    return C, labels, inertia, history, n_iter


def kmeans_poses(poses, k: int = DEFAULT_K, seed: int = 0, max_iters: int = DEFAULT_MAX_ITERS,
                 tol: float = DEFAULT_TOL) -> PoseClusters:
    poses = list(poses)
    if len(poses) < k:
        raise TooFewPoses(f"{len(poses)} poses for k={k}")
    ids = {(p.skeleton_id, p.n_joints) for p in poses}
    if len(ids) > 1:
        raise SkeletonMismatch(f"poses span several skeletons: {sorted(ids)}")
    X = np.stack([p.joints.reshape(-1) for p in poses])
    C, labels, inertia, hist, n_iter = kmeans_array(X, k, seed, max_iters, tol)
    return PoseClusters(k, seed, C, labels, inertia, hist, n_iter)


def assign_classes(clusters: PoseClusters, class_map: dict) -> PoseClusters:
    """Attach a cluster-id -> class-name map (e.g. Stand/Walk, Sit, Crouch)."""
    cmap = {int(c): str(name) for c, name in class_map.items()}
    missing = sorted(set(range(clusters.k)) - set(cmap))
    if missing:
        raise IncompleteMap(f"class map misses cluster(s) {missing}")
    return replace(clusters, class_map=cmap)


# Retargeting -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RetargetMap:
    """Joint-space linear map shared by the x, y and z coordinate vectors.

    ``matrix`` is ``(J_tgt, J_src)``, or ``(J_tgt, J_src + 1)`` for the affine
    variant whose last column is a constant offset.
    """

    matrix: np.ndarray
    source: str
    target: str
    affine: bool = False

    def __post_init__(self):
        M = np.array(self.matrix, dtype=np.float64)
        if M.ndim != 2 or not np.isfinite(M).all():
            raise ShapeMismatch("retarget matrix must be a finite 2D array")
        if self.affine and M.shape[1] < 2:
            raise ShapeMismatch("affine retarget matrix needs an offset column")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def n_source(self) -> int:
        return self.matrix.shape[1] - (1 if self.affine else 0)

    def apply_array(self, joints: np.ndarray) -> np.ndarray:
        """``(..., J_src, 3) -> (..., J_tgt, 3)``."""
        joints = np.asarray(joints, dtype=np.float64)
        M = self.matrix
        if self.affine:
            return M[:, :-1] @ joints + M[:, -1:]
        return M @ joints


def _stack_columns(frames, what: str) -> tuple[np.ndarray, str]:
    frames = list(frames)
    if not frames:
        raise InsufficientFrames(f"no {what} frames")
    ids = {(p.skeleton_id, p.n_joints) for p in frames}
    if len(ids) > 1:
        raise ShapeMismatch(f"{what} frames span several skeletons: {sorted(ids)}")
    # columns are per-(frame, axis) joint vectors
    return np.concatenate([p.joints for p in frames], axis=1), frames[0].skeleton_id


def fit_retarget_array(S: np.ndarray, T: np.ndarray, ridge_lambda: float = 0.0,
                       affine: bool = False) -> np.ndarray:
    """Solve ``min ||M S - T||^2 + lambda ||M||^2`` for column-stacked joint vectors."""
    if ridge_lambda < 0:
        raise ValueError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
    if S.shape[1] != T.shape[1]:
        raise ShapeMismatch(f"{S.shape[1]} source columns vs {T.shape[1]} target columns")
    if affine:
        S = np.vstack([S, np.ones((1, S.shape[1]))])
    G = S @ S.T
    if ridge_lambda == 0:
        rank = np.linalg.matrix_rank(G)
        if rank < G.shape[0]:
            raise RankDeficient(f"source joint matrix has rank {rank} < {G.shape[0]}; "
                                "use more varied frames or ridge_lambda > 0")
    G = G + ridge_lambda * np.eye(G.shape[0])
    # M G = T S^T  ->  G M^T = S T^T  (G symmetric)
    return np.linalg.solve(G, S @ T.T).T


def fit_retarget_map(src_frames, tgt_frames, ridge_lambda: float = 0.0,
                     affine: bool = False) -> RetargetMap:
    """Fit one linear joint map from paired source/target poses."""
    src_frames, tgt_frames = list(src_frames), list(tgt_frames)
    if len(src_frames) != len(tgt_frames):
        raise ShapeMismatch(f"{len(src_frames)} source frames vs {len(tgt_frames)} target frames")
    S, sid = _stack_columns(src_frames, "source")
    T, tid = _stack_columns(tgt_frames, "target")
    J = S.shape[0] + (1 if affine else 0)
    if ridge_lambda == 0 and len(src_frames) < J:
        raise InsufficientFrames(f"{len(src_frames)} frames; need at least {J} without ridge")
    return RetargetMap(fit_retarget_array(S, T, ridge_lambda, affine), sid, tid, affine)


def apply_retarget_map(rmap: RetargetMap, pose: Pose3D) -> Pose3D:
    if pose.skeleton_id != rmap.source or pose.n_joints != rmap.n_source:
        raise SkeletonMismatch(f"map expects {rmap.source!r} with {rmap.n_source} joints, "
                               f"got {pose.skeleton_id!r} with {pose.n_joints}")
    return Pose3D(rmap.apply_array(pose.joints), pose.frame, rmap.target)
