"""Synthetic data generators shared by the test modules."""
import numpy as np

from poselift.geometry import CameraIntrinsics


def random_pose(rng, tree, spread=None):
    """Root-relative pose grown along the tree with random bone vectors.

    If ``spread`` is given, the pose is rescaled so that its largest joint
    distance from the joint centroid equals ``spread`` mm.
    """
    J = tree.n_joints
    out = np.zeros((J, 3))
    for j in tree.topological_order:
        if j == tree.root:
            continue
        bone = rng.normal(size=3)
        bone *= rng.uniform(80, 400) / np.linalg.norm(bone)
        out[j] = out[tree.parent1[j]] + bone
    if spread is not None:
        c = out - out.mean(axis=0)
        out *= spread / np.linalg.norm(c, axis=1).max()
    out[tree.root] = 0.0
    return out


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def camera(f=1000.0, pp=(960.0, 540.0), size=(1920, 1080)):
    return CameraIntrinsics(f, pp, size)


def off_center_scene(rng, tree, cam, noise=0.0):
    """True camera-space pose of a subject 15-40 degrees off the optical axis,
    its pinhole keypoints, and the root-relative pose as seen by a virtual
    camera turned toward the subject (what a crop-based regressor predicts).
    """
    from poselift.geometry import rotation_about_up

    P = random_pose(rng, tree, spread=rng.uniform(500, 900))
    z = rng.uniform(2000, 8000)
    ang = np.radians(rng.uniform(15, 40) * rng.choice([-1, 1]))
    T = np.array([np.tan(ang) * z, rng.uniform(-0.05, 0.05) * z, z])
    G = P + T
    K = cam.f * G[:, :2] / G[:, 2:] + cam.pp
    u0 = (K[:, 0].min() + K[:, 0].max()) / 2
    R = rotation_about_up(np.arctan2(u0 - cam.principal_point[0], cam.f))
    P_virtual = (G - G[tree.root]) @ R
    if noise:
        P_virtual = P_virtual + rng.normal(scale=noise, size=P_virtual.shape)
    P_virtual -= P_virtual[tree.root]
    return G, K, P_virtual
