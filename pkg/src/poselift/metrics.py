"""3D pose evaluation: MPJPE, 3DPCK, PCK curves / AUC, similarity alignment,
and bucketed evaluation reports.

A joint counts as correct when its error is strictly below the threshold, or
exactly zero (so a threshold of 0 counts exact matches).
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadRange,
    DegenerateConfiguration,
    EmptyAfterSampling,
    FrameMismatch,
    LabelMismatch,
    SkeletonMismatch,
)
from .poses import Pose3D

DEFAULT_THRESHOLD = 150.0
DEFAULT_AUC_RANGE = (0.0, 150.0, 5.0)
CSV_COLUMNS = ("bucket_type", "bucket_name", "frames", "mpjpe_mm", "pck150", "auc")


class AlignMode(str, enum.Enum):
    NONE = "none"
    T = "T"
    ST = "ST"
    RST = "RST"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for m in cls:
                if m.value.lower() == value.lower():
                    return m
        return None


def _check_pair(pred: Pose3D, gt: Pose3D) -> None:
    if pred.skeleton_id != gt.skeleton_id or pred.n_joints != gt.n_joints:
        raise SkeletonMismatch(f"prediction ({pred.skeleton_id!r}, {pred.n_joints} joints) vs "
                               f"ground truth ({gt.skeleton_id!r}, {gt.n_joints} joints)")
    if pred.frame != gt.frame:
        raise FrameMismatch(f"prediction is {pred.frame.value}, ground truth is {gt.frame.value}")


def _subset(n_joints: int, subset) -> np.ndarray:
    if subset is None:
        return np.arange(n_joints)
    idx = np.asarray(subset, dtype=np.intp)
    if idx.size == 0:
        raise BadRange("empty joint subset")
    if idx.min() < 0 or idx.max() >= n_joints:
        raise SkeletonMismatch(f"subset index out of range for {n_joints} joints")
    return idx


def joint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Euclidean per-joint distances, shape ``(..., J)``."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return np.sqrt(np.einsum("...c,...c->...", d, d))


def mpjpe(pred: Pose3D, gt: Pose3D, subset=None) -> float:
    _check_pair(pred, gt)
    idx = _subset(pred.n_joints, subset)
    return float(joint_errors(pred.joints[idx], gt.joints[idx]).mean())


def _correct(err, t):
    return (err < t) | (err == 0)


def pck3d(pred: Pose3D, gt: Pose3D, subset=None, threshold: float = DEFAULT_THRESHOLD) -> float:
    _check_pair(pred, gt)
    if threshold < 0:
        raise BadRange(f"threshold must be >= 0, got {threshold}")
    idx = _subset(pred.n_joints, subset)
    return float(np.mean(_correct(joint_errors(pred.joints[idx], gt.joints[idx]), threshold)))


def pck_thresholds(t_min: float = 0.0, t_max: float = 150.0, step: float = 5.0) -> np.ndarray:
    """``t_min, t_min + step, ...`` up to and including ``t_max`` when it lies on the grid."""
    if not (np.isfinite(t_min) and np.isfinite(t_max) and np.isfinite(step)):
        raise BadRange("non-finite threshold range")
    if step <= 0 or t_min > t_max or t_min < 0:
        raise BadRange(f"bad threshold range {t_min}:{t_max}:{step}")
    n = int(math.floor((t_max - t_min) / step + 1e-9)) + 1
    return t_min + step * np.arange(n)


@dataclass(frozen=True, eq=False)
class PckCurve:
    thresholds: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.thresholds) != len(self.values):
            raise BadRange("thresholds and values differ in length")


def pck_curve(pred: Pose3D, gt: Pose3D, subset=None, t_min: float = 0.0,
              t_max: float = 150.0, step: float = 5.0) -> PckCurve:
    _check_pair(pred, gt)
    ts = pck_thresholds(t_min, t_max, step)
    idx = _subset(pred.n_joints, subset)
    e = joint_errors(pred.joints[idx], gt.joints[idx])
    return PckCurve(ts, _correct(e[:, None], ts[None, :]).mean(axis=0))


def auc(curve: PckCurve) -> float:
    """Mean of the sampled PCK values (rectangle rule on a uniform grid)."""
    return float(np.mean(curve.values))


# Alignment -------------------------------------------------------------------

def _ls_transform(X, Y, mode: AlignMode):
    """Least-squares (scale, rotation) for centered ``X`` onto centered ``Y``."""
    batch = X.shape[:-2]
    s = np.ones(batch)
    R = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
    if mode in (AlignMode.NONE, AlignMode.T):
        return s, R
    var_x = np.einsum("...jc,...jc->...", X, X)
    if np.any(var_x <= 0):
        raise DegenerateConfiguration("prediction joints are coincident")
    if mode is AlignMode.ST:
        return np.einsum("...jc,...jc->...", X, Y) / var_x, R
    cov = np.swapaxes(Y, -1, -2) @ X  # (..., 3, 3) = Y^T X
    U, S, Vt = np.linalg.svd(cov)
    if np.any(S[..., 1] <= 1e-12 * np.maximum(S[..., 0], np.finfo(float).tiny)):
        raise DegenerateConfiguration("joints are collinear or coincident; rotation is not unique")
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    D = np.ones(S.shape)
    D[..., 2] = d
    R = (U * D[..., None, :]) @ Vt
    return np.sum(S * D, axis=-1) / var_x, R


_NESTED = (AlignMode.NONE, AlignMode.T, AlignMode.ST, AlignMode.RST)


def align_array(pred: np.ndarray, gt: np.ndarray, mode: AlignMode | str, joints=None) -> np.ndarray:
    """Align ``pred`` onto ``gt`` for ``(..., J, 3)`` arrays.

    ``T`` matches centroids, ``ST`` adds one uniform scale, ``RST`` is the full
    similarity (Umeyama) with the reflection case excluded. Each is the
    least-squares fit on ``joints`` (default all), applied to every joint.

    Least squares does not order the *mean* error of the nested modes, so each
    mode also tries the solutions of the modes it contains and keeps whichever
    gives the lowest MPJPE on ``joints``. This makes
    ``MPJPE(RST) <= MPJPE(ST) <= MPJPE(T) <= MPJPE(none)`` hold exactly; the
    least-squares solution is kept on ties.
    """
    mode = AlignMode(mode)
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise FrameMismatch(f"shape {pred.shape} vs {gt.shape}")
    if mode is AlignMode.NONE:
        return pred.copy()
    idx = np.arange(pred.shape[-2]) if joints is None else np.asarray(joints)
    pf, gf = pred[..., idx, :], gt[..., idx, :]
    mu_p = pf.mean(axis=-2, keepdims=True)
    mu_g = gf.mean(axis=-2, keepdims=True)
    X, Y = pf - mu_p, gf - mu_g

    best = None
    best_err = None
    for m in reversed(_NESTED[:_NESTED.index(mode) + 1]):
        if m is AlignMode.NONE:
            cand = pred
        else:
            s, R = _ls_transform(X, Y, m)
            cand = s[..., None, None] * ((pred - mu_p) @ np.swapaxes(R, -1, -2)) + mu_g
        err = joint_errors(cand[..., idx, :], gf).mean(axis=-1)
        if best is None:
            best, best_err = cand, err
            continue
        better = err < best_err
        best = np.where(better[..., None, None], cand, best)
        best_err = np.where(better, err, best_err)
    return best


def align(pred: Pose3D, gt: Pose3D, mode: AlignMode | str) -> Pose3D:
    _check_pair(pred, gt)
    return Pose3D(align_array(pred.joints, gt.joints, mode), pred.frame, pred.skeleton_id)


# Bucketed evaluation -----------------------------------------------------------

@dataclass(frozen=True)
class FrameLabels:
    activity: str | None = None
    scene: str | None = None
    subject: str | None = None
    frame_index: int | None = None


@dataclass
class EvalConfig:
    subset: Sequence[int] | None = None
    threshold: float = DEFAULT_THRESHOLD
    auc_range: tuple[float, float, float] = DEFAULT_AUC_RANGE
    stride: int = 1
    joint_groups: dict[str, Sequence[int]] = field(default_factory=dict)
    align: AlignMode | str = AlignMode.NONE

    @classmethod
    def for_skeleton(cls, skeleton, **kw) -> EvalConfig:
        return cls(subset=list(skeleton.eval_subset), joint_groups=skeleton.joint_groups(), **kw)


@dataclass
class BucketStats:
    """Mergeable accumulator; merging is associative and commutative."""

    frames: int = 0
    joints: int = 0
    error_sum: float = 0.0
    correct: int = 0
    auc_sum: float = 0.0

    def merge(self, other: BucketStats) -> BucketStats:
        return BucketStats(self.frames + other.frames, self.joints + other.joints,
                           self.error_sum + other.error_sum, self.correct + other.correct,
                           self.auc_sum + other.auc_sum)

    @property
    def mpjpe(self) -> float:
        return self.error_sum / self.joints if self.joints else float("nan")

    @property
    def pck(self) -> float:
        return self.correct / self.joints if self.joints else float("nan")

    @property
    def auc(self) -> float:
        return self.auc_sum / self.frames if self.frames else float("nan")

    def summary(self) -> dict:
        return {"frames": self.frames, "mpjpe_mm": self.mpjpe, "pck": self.pck, "auc": self.auc}


@dataclass
class EvalReport:
    total: BucketStats
    breakdowns: dict[str, dict[str, BucketStats]]
    stride: int
    threshold: float
    auc_thresholds: np.ndarray
    align: str

    @property
    def frame_count(self) -> int:
        return self.total.frames

    @property
    def mpjpe(self) -> float:
        return self.total.mpjpe

    @property
    def pck(self) -> float:
        return self.total.pck

    @property
    def auc(self) -> float:
        return self.total.auc

    def rows(self) -> list[tuple]:
        out = [("total", "all", self.total.frames, self.total.mpjpe, self.total.pck, self.total.auc)]
        for btype in sorted(self.breakdowns):
            for name in sorted(self.breakdowns[btype]):
                b = self.breakdowns[btype][name]
                out.append((btype, name, b.frames, b.mpjpe, b.pck, b.auc))
        return out

    def to_dict(self) -> dict:
        return {
            "frames": self.total.frames,
            "stride": self.stride,
            "threshold_mm": self.threshold,
            "auc_thresholds_mm": [float(t) for t in self.auc_thresholds],
            "align": self.align,
            "total": self.total.summary(),
            "breakdowns": {bt: {n: b.summary() for n, b in sorted(d.items())}
                           for bt, d in sorted(self.breakdowns.items())},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for bt, name, frames, m, p, a in self.rows():
            w.writerow([bt, name, frames, repr(float(m)), repr(float(p)), repr(float(a))])
        return buf.getvalue()


def _frame_stats(err: np.ndarray, threshold: float, ts: np.ndarray):
    """Per-frame (error sum, correct count, auc) for errors of shape (N, S)."""
    err_sum = err.sum(axis=1)
    correct = _correct(err, threshold).sum(axis=1)
    frame_auc = np.empty(len(err))
    # chunked to bound the (N, S, T) temporary
    for i in range(0, len(err), 4096):
        e = err[i:i + 4096]
        frame_auc[i:i + 4096] = _correct(e[:, :, None], ts).mean(axis=(1, 2))
    return err_sum, correct, frame_auc


def _bucket(err_sum, correct, frame_auc, n_joints, mask=None) -> BucketStats:
    if mask is not None:
        err_sum, correct, frame_auc = err_sum[mask], correct[mask], frame_auc[mask]
    n = len(err_sum)
    return BucketStats(n, n * n_joints, float(math.fsum(err_sum)), int(correct.sum()),
                       float(math.fsum(frame_auc)))


def evaluate_arrays(pred: np.ndarray, gt: np.ndarray, labels: Sequence[FrameLabels] | None,
                    config: EvalConfig) -> EvalReport:
    """Vectorized evaluation of stacked ``(N, J, 3)`` predictions."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-1] != 3:
        raise SkeletonMismatch(f"prediction shape {pred.shape} vs ground truth {gt.shape}")
    if labels is not None and len(labels) != len(pred):
        raise LabelMismatch(f"{len(labels)} labels for {len(pred)} frames")
    if config.stride < 1:
        raise BadRange(f"stride must be >= 1, got {config.stride}")
    keep = np.arange(0, len(pred), config.stride)
    if keep.size == 0:
        raise EmptyAfterSampling("no frames left after stride sampling")
    pred, gt = pred[keep], gt[keep]
    if labels is not None:
        labels = [labels[i] for i in keep]
    ts = pck_thresholds(*config.auc_range)
    if config.threshold < 0:
        raise BadRange(f"threshold must be >= 0, got {config.threshold}")

    J = pred.shape[1]
    idx = _subset(J, config.subset)
    aligned = align_array(pred, gt, config.align, idx)
    err = joint_errors(aligned, gt)

    stats = _frame_stats(err[:, idx], config.threshold, ts)
    total = _bucket(*stats, len(idx))
    breakdowns: dict[str, dict[str, BucketStats]] = {}

    if config.joint_groups:
        groups = {}
        for name, joints in config.joint_groups.items():
            gidx = _subset(J, joints)
            groups[name] = _bucket(*_frame_stats(err[:, gidx], config.threshold, ts), len(gidx))
        breakdowns["joint_group"] = groups

    if labels is not None:
        for attr in ("activity", "scene", "subject"):
            values = [getattr(lb, attr) for lb in labels]
            if all(v is None for v in values):
                continue
            names = np.array(["unlabeled" if v is None else str(v) for v in values])
            breakdowns[attr] = {str(n): _bucket(*stats, len(idx), names == n)
                                for n in np.unique(names)}

    return EvalReport(total, breakdowns, config.stride, float(config.threshold), ts,
                      AlignMode(config.align).value)


def evaluate(frames: Iterable, config: EvalConfig | None = None) -> EvalReport:
    """Evaluate a stream of ``(pred, gt, labels)`` triples.

    Every ``config.stride``-th frame is kept, starting at position 0 of the
    stream. ``labels`` may be ``None`` or a :class:`FrameLabels`.
    """
    config = config or EvalConfig()
    preds, gts, labels = [], [], []
    skeleton = None
    for i, item in enumerate(frames):
        if i % max(config.stride, 1):
            continue
        pred, gt, lab = item
        _check_pair(pred, gt)
        if skeleton is None:
            skeleton = (pred.skeleton_id, pred.n_joints)
        elif skeleton != (pred.skeleton_id, pred.n_joints):
            raise SkeletonMismatch(f"frame {i} is on {pred.skeleton_id!r}, stream started on {skeleton[0]!r}")
        preds.append(pred.joints)
        gts.append(gt.joints)
        labels.append(lab if lab is not None else FrameLabels())
    if not preds:
        raise EmptyAfterSampling("no frames left after stride sampling")
    sampled = EvalConfig(config.subset, config.threshold, config.auc_range, 1,
                         config.joint_groups, config.align)
    report = evaluate_arrays(np.stack(preds), np.stack(gts), labels, sampled)
    report.stride = config.stride
    return report
