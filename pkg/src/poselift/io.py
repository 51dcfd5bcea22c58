"""File formats: pose archives (CSV / JSON), calibration, clusters, retarget
maps, fusion weights, crop boxes, evaluation reports and augmentation
manifests. Every writer goes through a temp file plus atomic rename.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import PoseClusters, RetargetMap
from .augment import AugmentPlan, Tier
from .errors import ParseError, SkeletonMismatch
from .geometry import CameraIntrinsics, CropBox
from .metrics import FrameLabels
from .poses import Frame, Pose2D, Pose3D
from .representations import FusionWeights, RelPose
from .skeleton import SkeletonDef

ARCHIVE_MAGIC = "poselift-archive v1"
FRAME_TYPES = ("root_relative", "camera_global", "order1", "order2", "image")
LABEL_COLUMNS = ("activity", "scene", "subject")
_AXES = "xyz"


def fmt(x) -> str:
    """Shortest decimal that round-trips the float exactly."""
    return repr(float(x))


def write_text_atomic(path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def write_bytes_atomic(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path):
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise ParseError(f"{path}: empty file")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}") from None


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


# Pose archives -------------------------------------------------------------------

@dataclass(eq=False)
class PoseArchive:
    skeleton_id: str
    frame_type: str
    frames: np.ndarray                 # (N,) int, strictly increasing
    values: np.ndarray                 # (N, J, dims)
    labels: list[FrameLabels] | None = None
    camera_id: str | None = None
    units: str = field(default="")

    def __post_init__(self):
        if self.frame_type not in FRAME_TYPES:
            raise ParseError(f"unknown frame_type {self.frame_type!r}")
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != self.dims:
            raise ParseError(f"{self.frame_type} archive needs (N, J, {self.dims}) values, "
                             f"got {self.values.shape}")
        if len(self.frames) != len(self.values):
            raise ParseError(f"{len(self.frames)} frame indices for {len(self.values)} records")
        if np.any(np.diff(self.frames) <= 0):
            raise ParseError("frame indices must be strictly increasing")
        if not np.isfinite(self.values).all():
            raise ParseError("archive contains non-finite values")
        if self.labels is not None:
            if len(self.labels) != len(self.frames):
                raise ParseError(f"{len(self.labels)} labels for {len(self.frames)} frames")
            self.labels = [replace(lb, frame_index=int(fr)) for lb, fr in zip(self.labels, self.frames)]
        if not self.units:
            self.units = "px" if self.frame_type == "image" else "mm"

    @property
    def dims(self) -> int:
        return 2 if self.frame_type == "image" else 3

    @property
    def n_joints(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, PoseArchive):
            return NotImplemented
        return (self.skeleton_id == other.skeleton_id and self.frame_type == other.frame_type
                and self.camera_id == other.camera_id and self.units == other.units
                and np.array_equal(self.frames, other.frames)
                and np.array_equal(self.values, other.values)
                and self.labels == other.labels)

    __hash__ = None

    def check_skeleton(self, sk: SkeletonDef) -> None:
        if self.skeleton_id != sk.name or self.n_joints != sk.n_joints:
            raise SkeletonMismatch(f"archive is on {self.skeleton_id!r} with {self.n_joints} joints, "
                                   f"expected {sk.name!r} with {sk.n_joints}")

    def poses(self) -> list[Pose3D]:
        if self.frame_type not in ("root_relative", "camera_global"):
            raise SkeletonMismatch(f"{self.frame_type} archive does not hold absolute 3D poses")
        frame = Frame(self.frame_type)
        return [Pose3D(v, frame, self.skeleton_id) for v in self.values]

    def rel_poses(self) -> list[RelPose]:
        if self.frame_type not in ("order1", "order2"):
            raise SkeletonMismatch(f"{self.frame_type} archive does not hold relative encodings")
        order = int(self.frame_type[-1])
        return [RelPose(v, order, self.skeleton_id) for v in self.values]

    def keypoints(self) -> list[Pose2D]:
        if self.frame_type != "image":
            raise SkeletonMismatch(f"{self.frame_type} archive does not hold 2D keypoints")
        return [Pose2D(v, self.skeleton_id) for v in self.values]

    @classmethod
    def from_poses(cls, frames, poses, labels=None, camera_id=None) -> PoseArchive:
        poses = list(poses)
        first = poses[0]
        if isinstance(first, Pose2D):
            ft, vals = "image", [p.points for p in poses]
        elif isinstance(first, RelPose):
            ft, vals = f"order{first.order}", [p.deltas for p in poses]
        else:
            ft, vals = first.frame.value, [p.joints for p in poses]
        return cls(first.skeleton_id, ft, np.asarray(frames), np.stack(vals), labels, camera_id)


def _value_columns(n_joints: int, dims: int) -> list[str]:
    return [f"j{j}_{_AXES[a]}" for j in range(n_joints) for a in range(dims)]


def _archive_to_csv(arc: PoseArchive) -> str:
    buf = _io.StringIO()
    buf.write(f"# {ARCHIVE_MAGIC}\n")
    buf.write(f"# skeleton: {arc.skeleton_id}\n")
    buf.write(f"# units: {arc.units}\n")
    buf.write(f"# frame_type: {arc.frame_type}\n")
    if arc.camera_id is not None:
        buf.write(f"# camera: {arc.camera_id}\n")
    w = csv.writer(buf, lineterminator="\n")
    label_cols = list(LABEL_COLUMNS) if arc.labels is not None else []
    w.writerow(["frame", *label_cols, *_value_columns(arc.n_joints, arc.dims)])
    for i, (fr, vals) in enumerate(zip(arc.frames, arc.values)):
        row = [str(int(fr))]
        if arc.labels is not None:
            lb = arc.labels[i]
            row += ["" if getattr(lb, c) is None else str(getattr(lb, c)) for c in LABEL_COLUMNS]
        row += [fmt(x) for x in vals.reshape(-1)]
        w.writerow(row)
    return buf.getvalue()


_HEADER_KEYS = {"skeleton", "units", "frame_type", "camera"}


def _parse_float(tok: str, where: str) -> float:
    try:
        x = float(tok)
    except ValueError:
        raise ParseError(f"{where}: {tok!r} is not a number") from None
    if not math.isfinite(x):
        raise ParseError(f"{where}: non-finite value {tok!r} (complete poses are required)")
    return x


def _archive_from_csv(text: str, source: str) -> PoseArchive:
    lines = text.splitlines()
    meta: dict[str, str] = {}
    pos = 0
    while pos < len(lines) and lines[pos].startswith("#"):
        body = lines[pos][1:].strip()
        if body and body != ARCHIVE_MAGIC:
            key, sep, val = body.partition(":")
            key = key.strip()
            if not sep or key not in _HEADER_KEYS:
                raise ParseError(f"{source}: line {pos + 1}: unknown header entry {body!r}")
            meta[key] = val.strip()
        pos += 1
    for key in ("skeleton", "frame_type"):
        if key not in meta:
            raise ParseError(f"{source}: missing '# {key}:' header line")
    ft = meta["frame_type"]
    if ft not in FRAME_TYPES:
        raise ParseError(f"{source}: unknown frame_type {ft!r}")
    dims = 2 if ft == "image" else 3
    if pos >= len(lines):
        raise ParseError(f"{source}: missing column header line")
    header_line = pos + 1
    reader = csv.reader(lines[pos:])
    header = next(reader)
    if not header or header[0] != "frame":
        raise ParseError(f"{source}: line {header_line}: first column must be 'frame'")
    col = 1
    has_labels = header[1:4] == list(LABEL_COLUMNS)
    if has_labels:
        col = 4
    value_cols = header[col:]
    if not value_cols or len(value_cols) % dims:
        raise ParseError(f"{source}: line {header_line}: {len(value_cols)} value columns "
                         f"is not a multiple of {dims}")
    J = len(value_cols) // dims
    expected = _value_columns(J, dims)
    for k, (got, want) in enumerate(zip(value_cols, expected)):
        if got != want:
            raise ParseError(f"{source}: line {header_line}: column {col + k + 1} is {got!r}, expected {want!r}")

    frames, values, labels = [], [], []
    for r, row in enumerate(reader, start=header_line + 1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        try:
            fr = int(row[0])
        except ValueError:
            raise ParseError(f"{source}: line {r}: frame index {row[0]!r} is not an integer") from None
        where = f"{source}: line {r} (frame {fr})"
        if len(row) != len(header):
            got = (len(row) - col) / dims
            raise ParseError(f"{where}: {len(row)} fields, expected {len(header)} "
                             f"({got:g} joints instead of {J})")
        if frames and fr <= frames[-1]:
            raise ParseError(f"{where}: frame indices must be strictly increasing")
        vals = [_parse_float(tok, f"{where}, field {header[col + k]}")
                for k, tok in enumerate(row[col:])]
        frames.append(fr)
        values.append(vals)
        if has_labels:
            labels.append(FrameLabels(*(v if v else None for v in row[1:4]), frame_index=fr))
    arr = np.array(values, dtype=np.float64).reshape(len(frames), J, dims)
    return PoseArchive(meta["skeleton"], ft, np.array(frames, dtype=np.int64), arr,
                       labels if has_labels else None, meta.get("camera"),
                       meta.get("units", ""))


def _archive_to_json(arc: PoseArchive) -> str:
    records = []
    for i, (fr, vals) in enumerate(zip(arc.frames, arc.values)):
        rec = {"frame": int(fr), "values": vals.tolist()}
        if arc.labels is not None:
            for c in LABEL_COLUMNS:
                v = getattr(arc.labels[i], c)
                if v is not None:
                    rec[c] = v
        records.append(rec)
    obj = {"format": ARCHIVE_MAGIC, "skeleton": arc.skeleton_id, "units": arc.units,
           "frame_type": arc.frame_type, "camera": arc.camera_id,
           "labels": arc.labels is not None, "records": records}
    return _dump_json(obj)


def _archive_from_json(data, source: str) -> PoseArchive:
    if not isinstance(data, dict):
        raise ParseError(f"{source}: top level must be an object")
    allowed = {"format", "skeleton", "units", "frame_type", "camera", "labels", "records"}
    unknown = set(data) - allowed
    if unknown:
        raise ParseError(f"{source}: unknown field(s) {sorted(unknown)}")
    for key in ("skeleton", "frame_type", "records"):
        if key not in data:
            raise ParseError(f"{source}: missing field {key!r}")
    ft = data["frame_type"]
    if ft not in FRAME_TYPES:
        raise ParseError(f"{source}: unknown frame_type {ft!r}")
    dims = 2 if ft == "image" else 3
    frames, values, labels = [], [], []
    J = None
    for i, rec in enumerate(data["records"]):
        where = f"{source}: records[{i}]"
        if not isinstance(rec, dict) or "frame" not in rec or "values" not in rec:
            raise ParseError(f"{where}: needs 'frame' and 'values'")
        fr = rec["frame"]
        where += f" (frame {fr})"
        try:
            arr = np.array(rec["values"], dtype=np.float64)
        except (TypeError, ValueError):
            raise ParseError(f"{where}: values are not a numeric array") from None
        if arr.ndim != 2 or arr.shape[1] != dims:
            raise ParseError(f"{where}: values must be J x {dims}, got {arr.shape}")
        if J is None:
            J = arr.shape[0]
        elif arr.shape[0] != J:
            raise ParseError(f"{where}: {arr.shape[0]} joints, expected {J}")
        if not np.isfinite(arr).all():
            raise ParseError(f"{where}: non-finite value")
        if frames and fr <= frames[-1]:
            raise ParseError(f"{where}: frame indices must be strictly increasing")
        frames.append(fr)
        values.append(arr)
        labels.append(FrameLabels(*(rec.get(c) for c in LABEL_COLUMNS), frame_index=fr))
    vals = np.stack(values) if values else np.zeros((0, J or 0, dims))
    return PoseArchive(data["skeleton"], ft, np.array(frames, dtype=np.int64), vals,
                       labels if data.get("labels") else None, data.get("camera"),
                       data.get("units") or "")


def read_pose_archive(path, skeleton: SkeletonDef | None = None) -> PoseArchive:
    """Read a CSV or JSON pose archive (chosen by file extension)."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        arc = _archive_from_json(_read_json(path), str(path))
    else:
        text = path.read_text()
        if not text.strip():
            raise ParseError(f"{path}: empty file")
        arc = _archive_from_csv(text, str(path))
    if skeleton is not None:
        arc.check_skeleton(skeleton)
    return arc


def write_pose_archive(arc: PoseArchive, path) -> None:
    path = Path(path)
    text = _archive_to_json(arc) if path.suffix.lower() == ".json" else _archive_to_csv(arc)
    write_text_atomic(path, text)


# Calibration -------------------------------------------------------------------

_CALIB_KEYS = {"f", "cx", "cy", "width", "height"}


def read_calibration(path) -> dict[str, CameraIntrinsics]:
    """``{camera_id: {f, cx, cy, width, height}}`` -> intrinsics per camera."""
    data = _read_json(path)
    if not isinstance(data, dict) or not data:
        raise ParseError(f"{path}: expected a non-empty object keyed by camera id")
    cams = {}
    for cid, entry in data.items():
        if not isinstance(entry, dict) or set(entry) != _CALIB_KEYS:
            raise ParseError(f"{path}: camera {cid!r} needs exactly the fields {sorted(_CALIB_KEYS)}")
        for k in _CALIB_KEYS:
            if not isinstance(entry[k], (int, float)) or isinstance(entry[k], bool):
                raise ParseError(f"{path}: camera {cid!r} field {k!r} is not a number")
        cams[str(cid)] = CameraIntrinsics(float(entry["f"]), (entry["cx"], entry["cy"]),
                                          (entry["width"], entry["height"]))
    return cams


def write_calibration(cams: dict[str, CameraIntrinsics], path) -> None:
    obj = {cid: {"f": c.f, "cx": c.principal_point[0], "cy": c.principal_point[1],
                 "width": c.image_size[0], "height": c.image_size[1]} for cid, c in cams.items()}
    write_text_atomic(path, _dump_json(obj))


def read_crops(path) -> dict[int, CropBox]:
    """CSV ``frame,u,v,width,height`` -> crop box per frame."""
    path = Path(path)
    rows = list(csv.reader(path.read_text().splitlines()))
    if not rows or rows[0] != ["frame", "u", "v", "width", "height"]:
        raise ParseError(f"{path}: line 1: header must be frame,u,v,width,height")
    crops = {}
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 5:
            raise ParseError(f"{path}: line {r}: expected 5 fields, got {len(row)}")
        try:
            fr = int(row[0])
        except ValueError:
            raise ParseError(f"{path}: line {r}: bad frame index {row[0]!r}") from None
        u, v, w, h = (_parse_float(t, f"{path}: line {r} (frame {fr})") for t in row[1:])
        crops[fr] = CropBox((u, v), w, h)
    return crops


# Analysis artifacts --------------------------------------------------------------

def clusters_to_dict(cl: PoseClusters) -> dict:
    return {
        "k": cl.k,
        "seed": cl.seed,
        "centroids": cl.centroids.tolist(),
        "assignments": [int(a) for a in cl.assignments],
        "inertia": cl.inertia,
        "class_map": None if cl.class_map is None else {str(k): v for k, v in sorted(cl.class_map.items())},
    }


def write_clusters(cl: PoseClusters, path) -> None:
    write_text_atomic(path, _dump_json(clusters_to_dict(cl)))


def read_clusters(path) -> PoseClusters:
    d = _read_json(path)
    try:
        cmap = d.get("class_map")
        return PoseClusters(int(d["k"]), int(d["seed"]), np.array(d["centroids"], dtype=np.float64),
                            np.array(d["assignments"], dtype=np.intp), float(d["inertia"]),
                            class_map=None if cmap is None else {int(k): v for k, v in cmap.items()})
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: bad cluster file ({e})") from None


def read_class_map(path) -> dict[int, str]:
    d = _read_json(path)
    if not isinstance(d, dict):
        raise ParseError(f"{path}: class map must be an object cluster-id -> class")
    try:
        return {int(k): str(v) for k, v in d.items()}
    except ValueError:
        raise ParseError(f"{path}: class map keys must be integer cluster ids") from None


def write_retarget_map(rmap: RetargetMap, path) -> None:
    obj = {"source": rmap.source, "target": rmap.target, "affine": rmap.affine,
           "rows": rmap.matrix.shape[0], "cols": rmap.matrix.shape[1],
           "matrix": [float(x) for x in rmap.matrix.reshape(-1)]}
    write_text_atomic(path, _dump_json(obj))


def read_retarget_map(path) -> RetargetMap:
    d = _read_json(path)
    try:
        M = np.array(d["matrix"], dtype=np.float64).reshape(int(d["rows"]), int(d["cols"]))
        return RetargetMap(M, d["source"], d["target"], bool(d.get("affine", False)))
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: bad retarget map ({e})") from None


def write_fusion_weights(w: FusionWeights, skeleton_id: str, path) -> None:
    write_text_atomic(path, _dump_json({"skeleton": skeleton_id, "weights": w.w.tolist()}))


def read_fusion_weights(path) -> tuple[FusionWeights, str]:
    d = _read_json(path)
    try:
        return FusionWeights(np.array(d["weights"], dtype=np.float64)), str(d["skeleton"])
    except (KeyError, TypeError) as e:
        raise ParseError(f"{path}: bad fusion weights file ({e})") from None


# Augmentation manifest / plan ----------------------------------------------------

def read_manifest(path) -> list[dict]:
    """``{"frames": [{"id", "frame", "masks": {...}, "assets": {...}}]}``.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    d = _read_json(path)
    if not isinstance(d, dict) or not isinstance(d.get("frames"), list):
        raise ParseError(f"{path}: manifest needs a 'frames' list")
    base = path.parent
    out = []
    for i, e in enumerate(d["frames"]):
        if not isinstance(e, dict) or not {"id", "frame", "masks"} <= set(e):
            raise ParseError(f"{path}: frames[{i}] needs 'id', 'frame' and 'masks'")
        out.append({
            "id": str(e["id"]),
            "frame": base / e["frame"],
            "masks": {k: base / v for k, v in e["masks"].items()},
            "assets": {k: base / v for k, v in e.get("assets", {}).items()},
        })
    return out


def plan_to_dict(plan: AugmentPlan) -> dict:
    return {"seed": plan.seed, "proportions": list(plan.proportions),
            "tiers": {k: t.value for k, t in plan.tiers.items()}}


def read_plan(path) -> AugmentPlan:
    d = _read_json(path)
    try:
        return AugmentPlan({str(k): Tier(v) for k, v in d["tiers"].items()},
                           tuple(d["proportions"]), int(d["seed"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: bad plan file ({e})") from None
