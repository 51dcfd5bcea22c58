import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import least_squares

from helpers import camera, off_center_scene, random_pose, random_rotation
from poselift.errors import BehindCamera, DegenerateSpread, NonPositiveDepth, WrongFrame
from poselift.geometry import (
    CameraIntrinsics,
    CropBox,
    RigidTransform,
    compose_global,
    estimate_depth,
    estimate_global_translation,
    lift_to_global,
    perspective_correction,
    pinhole_project,
    reprojection_error,
    weak_perspective_project,
)
from poselift.poses import Frame, Pose2D, Pose3D
from poselift.representations import to_root_relative

CAM0 = CameraIntrinsics(1000.0, (0.0, 0.0), (2000, 2000))


def two_joint():
    pose = Pose3D([[-100, 0, 0], [100, 0, 0]], Frame.ROOT_RELATIVE, "pair")
    k2d = Pose2D([[-25, 0], [25, 0]], "pair")
    return pose, k2d


def energy_minimizer(P, K, cam, x0=(0.0, 0.0, 5000.0)):
    """Numerical oracle: minimize the weak-perspective energy over (x, y, z)."""
    Kc = K - cam.pp

    def resid(t):
        return (Kc - cam.f / t[2] * (P[:, :2] + t[:2])).ravel()

    sol = least_squares(resid, np.asarray(x0, float), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        method="lm", max_nfev=10000)
    return sol.x


def test_pinhole_examples():
    np.testing.assert_array_equal(pinhole_project([0, 0, 1000], CAM0), [0, 0])
    np.testing.assert_array_equal(pinhole_project([100, 0, 1000], CAM0), [100, 0])
    with pytest.raises(BehindCamera):
        pinhole_project([0, 0, -5], CAM0)


def test_weak_perspective_examples(tree, rng):
    pose, _ = two_joint()
    out = weak_perspective_project(pose, [0, 0, 4000], CAM0)
    np.testing.assert_array_equal(out.points, [[-25, 0], [25, 0]])
    far = weak_perspective_project(pose, [300, -200, 1e15], CAM0)
    np.testing.assert_allclose(far.points, 0.0, atol=1e-9)
    with pytest.raises(BehindCamera):
        weak_perspective_project(pose, [0, 0, 0], CAM0)


def test_weak_vs_pinhole_far_away(tree, rng):
    cam = camera()
    for _ in range(100):
        P = random_pose(rng, tree)
        radius = np.linalg.norm(P, axis=1).max()
        T = np.array([0.0, 0.0, 50 * radius])
        weak = weak_perspective_project(Pose3D(P, Frame.ROOT_RELATIVE, "h36m17"), T, cam).points
        full = pinhole_project(P + T, cam)
        spread = np.linalg.norm(full - cam.pp, axis=1).max()
        assert np.abs(weak - full).max() < 0.02 * spread


def test_depth_worked_case():
    pose, k2d = two_joint()
    assert estimate_depth(pose, k2d, CAM0, "exact") == 4000.0
    assert estimate_depth(pose, k2d, CAM0, "approx") == 4000.0


def test_translation_worked_cases():
    pose, k2d = two_joint()
    np.testing.assert_array_equal(estimate_global_translation(pose, k2d, CAM0), [0, 0, 4000])
    shifted = Pose2D(k2d.points + [50, 0], "pair")
    np.testing.assert_array_equal(estimate_global_translation(pose, shifted, CAM0), [200, 0, 4000])


def test_degenerate_and_anticorrelated():
    pose, _ = two_joint()
    with pytest.raises(DegenerateSpread):
        estimate_depth(pose, Pose2D([[5, 5], [5, 5]], "pair"), CAM0)
    flat = Pose3D([[0, 0, 0], [0, 0, 300]], Frame.ROOT_RELATIVE, "pair")
    with pytest.raises(DegenerateSpread):
        estimate_depth(flat, Pose2D([[0, 0], [10, 0]], "pair"), CAM0)
    with pytest.raises(NonPositiveDepth):
        estimate_depth(pose, Pose2D([[25, 0], [-25, 0]], "pair"), CAM0, "exact")
    assert estimate_depth(pose, Pose2D([[25, 0], [-25, 0]], "pair"), CAM0, "approx") == 4000.0


def test_exact_matches_numerical_minimizer(tree, rng):
    cam = camera()
    for _ in range(50):
        P = random_pose(rng, tree, spread=rng.uniform(300, 1000))
        T = np.array([rng.uniform(-1500, 1500), rng.uniform(-800, 800), rng.uniform(2000, 8000)])
        pose = Pose3D(P, Frame.ROOT_RELATIVE, "h36m17")
        K = weak_perspective_project(pose, T, cam).points + rng.normal(scale=3.0, size=(17, 2))
        est = estimate_global_translation(pose, Pose2D(K, "h36m17"), cam)
        ref = energy_minimizer(P, K, cam)
        np.testing.assert_allclose(est, ref, rtol=1e-6)


def test_exact_is_stationary_point(tree, rng):
    cam = camera()
    from poselift.geometry import reprojection_energy

    for _ in range(20):
        P = random_pose(rng, tree, spread=600)
        pose = Pose3D(P, Frame.ROOT_RELATIVE, "h36m17")
        T0 = np.array([300.0, -100.0, 4000.0])
        K = Pose2D(weak_perspective_project(pose, T0, cam).points + rng.normal(scale=5, size=(17, 2)),
                   "h36m17")
        T = estimate_global_translation(pose, K, cam)
        h = 1e-3
        grad = np.zeros(3)
        curv = np.zeros(3)
        e0 = reprojection_energy(T, pose, K, cam)
        for i in range(3):
            d = np.zeros(3)
            d[i] = h
            ep, em = reprojection_energy(T + d, pose, K, cam), reprojection_energy(T - d, pose, K, cam)
            grad[i] = (ep - em) / (2 * h)
            curv[i] = (ep - 2 * e0 + em) / h**2
        # gradient small relative to local curvature x a 1 mm step
        assert np.linalg.norm(grad) <= 1e-6 * max(np.abs(curv).max() * 1e3, 1.0) + 1e-6


def test_approx_is_cosine_of_offset_angle(tree, rng):
    """z_approx / z_exact is the cosine of the angle between the stacked 2D and
    3D offset vectors, so the relative gap is 1 - cos(theta) and stays within
    1/cos(theta) - 1 whenever that angle does."""
    cam = camera()
    bound = 1 / np.cos(np.radians(10)) - 1
    for _ in range(200):
        P = random_pose(rng, tree, spread=rng.uniform(300, 1000))
        T = np.array([rng.uniform(-300, 300), rng.uniform(-300, 300), 3500.0])
        pose = Pose3D(P, Frame.ROOT_RELATIVE, "h36m17")
        K = Pose2D(pinhole_project(P + T, cam), "h36m17")
        ze = estimate_depth(pose, K, cam, "exact")
        za = estimate_depth(pose, K, cam, "approx")
        dK = (K.points - K.points.mean(0)).ravel()
        dP = (P[:, :2] - P[:, :2].mean(0)).ravel()
        cos = dK @ dP / (np.linalg.norm(dK) * np.linalg.norm(dP))
        assert za / ze == pytest.approx(cos, rel=1e-12)
        assert za <= ze * (1 + 1e-12)
        if cos >= np.cos(np.radians(10)):
            assert abs(za - ze) / ze <= bound
        ref = energy_minimizer(P, K.points, cam)[2]
        assert ze == pytest.approx(ref, rel=1e-6)


def test_approx_exact_for_weak_perspective(tree, rng):
    cam = camera()
    for _ in range(50):
        P = random_pose(rng, tree, spread=700)
        pose = Pose3D(P, Frame.ROOT_RELATIVE, "h36m17")
        K = weak_perspective_project(pose, [200, -100, 4500], cam)
        assert estimate_depth(pose, K, cam, "approx") == pytest.approx(4500, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 5.0), st.floats(-300, 300), st.floats(-300, 300))
def test_equivariances(tree, seed, s, du, dv):
    rng = np.random.default_rng(seed)
    cam = camera()
    P = random_pose(rng, tree, spread=500)
    pose = Pose3D(P, Frame.ROOT_RELATIVE, "h36m17")
    K = weak_perspective_project(pose, [100, 50, 4000], cam).points + rng.normal(scale=4, size=(17, 2))
    T = estimate_global_translation(pose, Pose2D(K, "h36m17"), cam)
    # scale f and pixels about the principal point
    cam_s = CameraIntrinsics(cam.f * s, cam.principal_point, cam.image_size)
    K_s = cam.pp + s * (K - cam.pp)
    np.testing.assert_allclose(estimate_global_translation(pose, Pose2D(K_s, "h36m17"), cam_s), T,
                               rtol=1e-9, atol=1e-7)
    # 2D shift moves only x, y
    T_d = estimate_global_translation(pose, Pose2D(K + [du, dv], "h36m17"), cam)
    assert T_d[2] == pytest.approx(T[2], rel=1e-12)
    np.testing.assert_allclose(T_d[:2] - T[:2], np.array([du, dv]) * T[2] / cam.f, atol=1e-7)


def test_perspective_correction_cases():
    cam = CameraIntrinsics(1000.0, (500.0, 400.0), (1000, 800))
    centered = Pose2D([[450, 100], [550, 700]], "pair")
    np.testing.assert_array_equal(perspective_correction(centered, cam).rotation, np.eye(3))
    vertical = Pose2D([[480, 0], [520, 10]], "pair")
    np.testing.assert_array_equal(perspective_correction(vertical, cam).rotation, np.eye(3))
    cam2 = CameraIntrinsics(1000.0, (0.0, 0.0), (4000, 4000))
    R = perspective_correction(Pose2D([[900, 0], [1100, 30]], "pair"), cam2).rotation
    assert np.degrees(np.arccos(R[0, 0])) == pytest.approx(45.0)
    np.testing.assert_allclose(R @ [0, 0, 1], np.array([1, 0, 1]) / np.sqrt(2))
    crop = perspective_correction(CropBox((1000.0, 5.0), 200, 300), cam2).rotation
    np.testing.assert_allclose(crop, R, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5000, 5000), st.floats(-5000, 5000))
def test_correction_is_rotation_about_up(du, dv):
    cam = CameraIntrinsics(800.0, (0.0, 0.0), (20000, 20000))
    R = perspective_correction(Pose2D([[du, dv], [du, dv]], "pair"), cam)
    Rm = R.rotation
    np.testing.assert_allclose(Rm @ [0, 1, 0], [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(Rm.T @ Rm, np.eye(3), atol=1e-12)
    alpha = np.arctan2(du, 800.0)
    assert Rm[0, 2] == pytest.approx(np.sin(alpha), abs=1e-15)
    assert Rm[0, 0] == pytest.approx(np.cos(alpha), abs=1e-15)


def test_compose_global(tree, rng):
    P = Pose3D(random_pose(rng, tree), Frame.ROOT_RELATIVE, "h36m17")
    g = compose_global(RigidTransform.identity(), [0, 0, 3000], P)
    assert g.frame == Frame.CAMERA_GLOBAL
    np.testing.assert_array_equal(g.joints, P.joints + [0, 0, 3000])
    np.testing.assert_allclose(to_root_relative(g, tree).joints, P.joints, atol=1e-9)
    with pytest.raises(WrongFrame):
        compose_global(RigidTransform.identity(), [0, 0, 1], g)


def test_compose_global_is_rigid(tree, rng):
    for _ in range(50):
        P = Pose3D(random_pose(rng, tree), Frame.ROOT_RELATIVE, "h36m17")
        g = compose_global(RigidTransform(random_rotation(rng), np.zeros(3)), rng.normal(size=3) * 1e3, P)
        d0 = np.linalg.norm(P.joints[:, None] - P.joints[None], axis=-1)
        d1 = np.linalg.norm(g.joints[:, None] - g.joints[None], axis=-1)
        np.testing.assert_allclose(d1, d0, rtol=1e-9, atol=1e-9)


def test_correction_reduces_reprojection_error(tree, rng):
    cam = camera()
    wins = 0
    for _ in range(200):
        _, K, Pv = off_center_scene(rng, tree, cam, noise=10.0)
        pose, k2d = Pose3D(Pv, Frame.ROOT_RELATIVE, "h36m17"), Pose2D(K, "h36m17")
        on, _ = lift_to_global(pose, k2d, cam, correction="centroid")
        off, _ = lift_to_global(pose, k2d, cam, correction="off")
        wins += reprojection_error(on, k2d, cam) <= reprojection_error(off, k2d, cam)
    assert wins >= 190


def test_lift_recovers_weak_perspective_translation(tree, rng):
    cam = camera()
    P = Pose3D(random_pose(rng, tree, spread=700), Frame.ROOT_RELATIVE, "h36m17")
    T = np.array([-400.0, 250.0, 5200.0])
    K = weak_perspective_project(P, T, cam)
    g, tf = lift_to_global(P, K, cam, correction="off")
    np.testing.assert_allclose(g.joints[tree.root], T, rtol=1e-9)
    np.testing.assert_array_equal(tf.rotation, np.eye(3))
