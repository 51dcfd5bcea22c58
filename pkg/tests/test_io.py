import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from helpers import random_pose
from poselift.analysis import RetargetMap, kmeans_array, PoseClusters
from poselift.errors import ParseError, SkeletonMismatch
from poselift.geometry import CameraIntrinsics
from poselift.io import (
    PoseArchive,
    read_calibration,
    read_clusters,
    read_crops,
    read_fusion_weights,
    read_manifest,
    read_pose_archive,
    read_retarget_map,
    write_calibration,
    write_clusters,
    write_fusion_weights,
    write_pose_archive,
    write_retarget_map,
)
from poselift.metrics import FrameLabels
from poselift.representations import FusionWeights


def archive(rng, tree, n=6, labels=True, frame_type="root_relative"):
    vals = np.stack([random_pose(rng, tree) for _ in range(n)])
    if frame_type == "image":
        vals = vals[..., :2]
    labs = [FrameLabels(f"act{i % 2}", "studio", "S9") for i in range(n)] if labels else None
    return PoseArchive("h36m17", frame_type, np.arange(0, 3 * n, 3), vals, labs)


@pytest.mark.parametrize("suffix", [".csv", ".json"])
@pytest.mark.parametrize("ft", ["root_relative", "camera_global", "order1", "image"])
def test_roundtrip(tmp_path, rng, tree, skeleton, suffix, ft):
    arc = archive(rng, tree, frame_type=ft)
    p = tmp_path / f"a{suffix}"
    write_pose_archive(arc, p)
    back = read_pose_archive(p, skeleton)
    assert back == arc
    assert back.labels[2].frame_index == 6


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(0, 2**32 - 1), st.sampled_from([".csv", ".json"]))
def test_roundtrip_random_values(tmp_path, seed, suffix):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(3, 4, 3)) * 10.0 ** rng.integers(-8, 8)
    arc = PoseArchive("toy", "camera_global", [1, 5, 9], vals)
    p = tmp_path / f"r{suffix}"
    write_pose_archive(arc, p)
    back = read_pose_archive(p)
    np.testing.assert_array_equal(back.values, vals)


def test_short_row_names_frame(tmp_path, rng, tree, skeleton):
    arc = archive(rng, tree, labels=False)
    p = tmp_path / "a.csv"
    write_pose_archive(arc, p)
    lines = p.read_text().splitlines()
    idx = next(i for i, ln in enumerate(lines) if ln.startswith("9,"))
    lines[idx] = ",".join(lines[idx].split(",")[:-3])
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as e:
        read_pose_archive(p, skeleton)
    assert "frame 9" in str(e.value) and f"line {idx + 1}" in str(e.value)


def test_rejects_nan_and_order(tmp_path, rng, tree):
    arc = archive(rng, tree, labels=False)
    p = tmp_path / "a.csv"
    write_pose_archive(arc, p)
    text = p.read_text()
    lines = text.splitlines()
    idx = next(i for i, ln in enumerate(lines) if ln.startswith("6,"))
    bad = lines[idx].split(",")
    bad[5] = "nan"
    p.write_text("\n".join(lines[:idx] + [",".join(bad)] + lines[idx + 1:]) + "\n")
    with pytest.raises(ParseError):
        read_pose_archive(p)
    swapped = lines[:idx] + [lines[idx + 1], lines[idx]] + lines[idx + 2:]
    p.write_text("\n".join(swapped) + "\n")
    with pytest.raises(ParseError):
        read_pose_archive(p)


def test_skeleton_mismatch(tmp_path, rng, tree, skeleton):
    arc = PoseArchive("other", "root_relative", [0], np.zeros((1, 17, 3)))
    p = tmp_path / "a.json"
    write_pose_archive(arc, p)
    with pytest.raises(SkeletonMismatch):
        read_pose_archive(p, skeleton)


def test_malformed_json(tmp_path):
    p = tmp_path / "a.json"
    p.write_text('{"format": ')
    with pytest.raises(ParseError):
        read_pose_archive(p)


def test_calibration(tmp_path):
    cams = {"cam0": CameraIntrinsics(1145.5, (512.5, 515.0), (1000, 1002))}
    p = tmp_path / "calib.json"
    write_calibration(cams, p)
    assert read_calibration(p) == cams
    p.write_text(json.dumps({"cam0": {"f": 1, "cx": 0, "cy": 0}}))
    with pytest.raises(ParseError):
        read_calibration(p)


def test_crops(tmp_path):
    p = tmp_path / "crops.csv"
    p.write_text("frame,u,v,width,height\n0,500,400,200,300\n")
    crop = read_crops(p)[0]
    assert crop.center == (500.0, 400.0) and crop.width == 200.0
    p.write_text("frame,u,v\n")
    with pytest.raises(ParseError):
        read_crops(p)


def test_artifacts_roundtrip(tmp_path, rng):
    X = rng.normal(size=(20, 6))
    C, lab, inertia, hist, n = kmeans_array(X, 3, seed=1)
    cl = PoseClusters(3, 1, C, lab, inertia, hist, n, {0: "Sit", 1: "Crouch", 2: "Stand/Walk"})
    write_clusters(cl, tmp_path / "c.json")
    back = read_clusters(tmp_path / "c.json")
    np.testing.assert_array_equal(back.centroids, C)
    assert back.class_map == cl.class_map and back.inertia == inertia

    rmap = RetargetMap(rng.normal(size=(4, 6)), "a", "b", affine=True)
    write_retarget_map(rmap, tmp_path / "m.json")
    back = read_retarget_map(tmp_path / "m.json")
    np.testing.assert_array_equal(back.matrix, rmap.matrix)
    assert back.affine and back.source == "a"

    w = FusionWeights(np.tile([0.5, 0.3, 0.2], (17, 1)))
    write_fusion_weights(w, "h36m17", tmp_path / "w.json")
    back, sid = read_fusion_weights(tmp_path / "w.json")
    np.testing.assert_array_equal(back.w, w.w)
    assert sid == "h36m17"


def test_manifest_paths(tmp_path):
    (tmp_path / "sub").mkdir()
    m = tmp_path / "sub" / "manifest.json"
    m.write_text(json.dumps({"frames": [{"id": "a", "frame": "a.png", "masks": {"background": "m.png"}}]}))
    (entry,) = read_manifest(m)
    assert entry["frame"] == tmp_path / "sub" / "a.png"
    m.write_text(json.dumps({"frames": [{"id": "a"}]}))
    with pytest.raises(ParseError):
        read_manifest(m)
