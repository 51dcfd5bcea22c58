import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_pose
from poselift.errors import InsufficientSamples, InvariantViolation, NonAffineWeights, WrongFrame
from poselift.poses import Frame, Pose3D
from poselift.representations import (
    FusionWeights,
    RelPose,
    decode_relative,
    encode_relative,
    fit_fusion_weights,
    fuse,
    to_root_relative,
)
from poselift.skeleton import SkeletonDef, build_skeleton


@pytest.fixture(scope="module")
def chain():
    sk = SkeletonDef("chain", (("root", 0), ("spine", 0), ("neck", 1)), 0, (0, 1, 2))
    return build_skeleton(sk)


def rr(joints, sid="h36m17"):
    return Pose3D(joints, Frame.ROOT_RELATIVE, sid)


def test_to_root_relative(tree):
    j = np.arange(51, dtype=float).reshape(17, 3)
    j[tree.root] = (100, 200, 3000)
    out = to_root_relative(Pose3D(j, Frame.CAMERA_GLOBAL, "h36m17"), tree)
    assert out.frame == Frame.ROOT_RELATIVE
    np.testing.assert_array_equal(out.joints, j - j[tree.root])


def test_to_root_relative_already_centered(tree, rng):
    j = random_pose(rng, tree)
    out = to_root_relative(Pose3D(j, Frame.CAMERA_GLOBAL, "h36m17"), tree)
    np.testing.assert_array_equal(out.joints, j)
    with pytest.raises(WrongFrame):
        to_root_relative(out, tree)


def test_nan_rejected_on_construction():
    j = np.zeros((17, 3))
    j[3, 1] = np.nan
    with pytest.raises(InvariantViolation):
        Pose3D(j, Frame.CAMERA_GLOBAL, "h36m17")


def test_chain_encodings(chain):
    p = Pose3D([[0, 0, 0], [0, 100, 0], [0, 250, 0]], Frame.ROOT_RELATIVE, "chain")
    o1 = encode_relative(p, chain, 1)
    o2 = encode_relative(p, chain, 2)
    np.testing.assert_array_equal(o1.deltas, [[0, 0, 0], [0, 100, 0], [0, 150, 0]])
    np.testing.assert_array_equal(o2.deltas[2], [0, 250, 0])
    np.testing.assert_array_equal(decode_relative(o1, chain).joints, p.joints)
    np.testing.assert_array_equal(decode_relative(o2, chain).joints, p.joints)


def test_zero_pose_encodes_to_zero(tree):
    z = rr(np.zeros((17, 3)))
    for order in (1, 2):
        assert not encode_relative(z, tree, order).deltas.any()
        assert not decode_relative(RelPose(np.zeros((17, 3)), order, "h36m17"), tree).joints.any()


def test_roundtrip_random(tree, rng):
    for _ in range(1000):
        p = rr(random_pose(rng, tree))
        for order in (1, 2):
            back = decode_relative(encode_relative(p, tree, order), tree)
            assert np.abs(back.joints - p.joints).max() <= 1e-9


def test_encode_requires_root_relative(tree):
    with pytest.raises(WrongFrame):
        encode_relative(Pose3D(np.ones((17, 3)), Frame.CAMERA_GLOBAL, "h36m17"), tree, 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5), st.sampled_from([1, 2]))
def test_encode_decode_linear(tree, seed, a, b, order):
    rng = np.random.default_rng(seed)
    x, y = random_pose(rng, tree), random_pose(rng, tree)
    ex = encode_relative(rr(x), tree, order).deltas
    ey = encode_relative(rr(y), tree, order).deltas
    exy = encode_relative(rr(a * x + b * y), tree, order).deltas
    np.testing.assert_allclose(exy, a * ex + b * ey, atol=1e-6)
    dx = decode_relative(RelPose(ex, order, "h36m17"), tree).joints
    dxy = decode_relative(RelPose(a * ex + b * ey, order, "h36m17"), tree).joints
    np.testing.assert_allclose(dxy, a * dx + b * y, atol=1e-6)


def triple(p, tree):
    return p, encode_relative(p, tree, 1), encode_relative(p, tree, 2)


def test_fuse_consistent_triple_any_affine_weights(tree, rng):
    for _ in range(50):
        p = rr(random_pose(rng, tree))
        w = rng.uniform(-2, 2, size=(17, 3))
        w[:, 2] = 1.0 - w[:, 0] - w[:, 1]
        out = fuse(*triple(p, tree), FusionWeights(w), tree)
        np.testing.assert_allclose(out.joints, p.joints, atol=1e-8)


def test_fuse_identity_weights_return_p(tree, rng):
    p = rr(random_pose(rng, tree))
    o1 = encode_relative(rr(random_pose(rng, tree)), tree, 1)
    o2 = encode_relative(rr(random_pose(rng, tree)), tree, 2)
    out = fuse(p, o1, o2, FusionWeights.root_only(17), tree)
    np.testing.assert_array_equal(out.joints, p.joints)


def test_non_affine_weights_rejected():
    with pytest.raises(NonAffineWeights):
        FusionWeights(np.full((17, 3), 0.3))


def noisy_samples(rng, tree, n, sig_p=(30.0,), sig_o1=8.0, sig_o2=12.0):
    """(p, o1, o2, gt) with independent noise on each estimate.

    ``sig_p`` may be per-joint so that the best mode differs between joints.
    """
    sig_p = np.broadcast_to(np.asarray(sig_p, dtype=float), (17,))
    out = []
    for _ in range(n):
        g = random_pose(rng, tree)
        p = g + rng.normal(size=g.shape) * sig_p[:, None]
        p[tree.root] = 0
        d1 = encode_relative(rr(g), tree, 1).deltas + rng.normal(scale=sig_o1, size=g.shape)
        d2 = encode_relative(rr(g), tree, 2).deltas + rng.normal(scale=sig_o2, size=g.shape)
        d1[tree.root] = d2[tree.root] = 0
        out.append((rr(p), RelPose(d1, 1, "h36m17"), RelPose(d2, 2, "h36m17"), rr(g)))
    return out


def kkt_oracle(A, y, lam):
    """Minimize ||A w - y||^2 + lam ||w - 1/3||^2 subject to sum(w) = 1 (Lagrange system)."""
    M = np.zeros((4, 4))
    M[:3, :3] = 2 * (A.T @ A + lam * np.eye(3))
    M[:3, 3] = 1
    M[3, :3] = 1
    rhs = np.concatenate([2 * (A.T @ y + lam / 3.0), [1.0]])
    return np.linalg.solve(M, rhs)[:3]


@pytest.mark.parametrize("lam", [0.0, 1e3])
def test_fit_matches_kkt_oracle(tree, rng, lam):
    samples = noisy_samples(rng, tree, 40)
    w = fit_fusion_weights(samples, tree, lam).w
    for j in range(17):
        if j == tree.root:
            continue
        est = np.stack([np.stack([s[0].joints[j], decode_relative(s[1], tree).joints[j],
                                  decode_relative(s[2], tree).joints[j]], axis=1) for s in samples])
        A = est.reshape(-1, 3)
        y = np.stack([s[3].joints[j] for s in samples]).reshape(-1)
        np.testing.assert_allclose(w[j], kkt_oracle(A, y, lam), atol=1e-8)


def test_fit_exact_p_gives_unit_weight_on_p(tree, rng):
    samples = noisy_samples(rng, tree, 30, sig_p=0.0, sig_o1=40.0, sig_o2=40.0)
    w = fit_fusion_weights(samples, tree).w
    nonroot = np.arange(17) != tree.root
    np.testing.assert_allclose(w[nonroot], np.tile([1.0, 0.0, 0.0], (16, 1)), atol=1e-9)


def test_fit_huge_ridge_gives_uniform(tree, rng):
    w = fit_fusion_weights(noisy_samples(rng, tree, 10), tree, 1e14).w
    np.testing.assert_allclose(w, 1.0 / 3.0, atol=1e-6)


def test_fit_single_sample(tree, rng):
    with pytest.raises(InsufficientSamples):
        fit_fusion_weights(noisy_samples(rng, tree, 1), tree)


def test_fitted_weights_beat_uniform_on_held_out(tree, rng):
    # extremities unreliable in P, so the best mode differs per joint
    sig_p = np.full(17, 15.0)
    sig_p[[0, 4, 7, 10, 13]] = 80.0
    train = noisy_samples(rng, tree, 400, sig_p=sig_p)
    test = noisy_samples(rng, tree, 400, sig_p=sig_p)
    w = fit_fusion_weights(train, tree)
    uni = FusionWeights.uniform(17)

    def err(weights):
        return np.mean([np.linalg.norm(fuse(p, a, b, weights, tree).joints - g.joints, axis=1).mean()
                        for p, a, b, g in test])

    assert err(w) <= err(uni)
    assert np.allclose(w.w.sum(axis=1), 1.0, atol=1e-9)
