import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvhand import diffcore as dc
from mvhand import handmodel as hm


def _theta(rng, scale=0.5):
    return rng.normal(scale=scale, size=(16, 3))


def test_rest_pose_is_shipped_constant():
    tree = hm.default_tree()
    J = hm.skeleton(hm.HandParams(np.zeros((16, 3)), np.zeros(10)))
    assert np.allclose(J, tree.rest_joints, atol=1e-15)
    assert np.allclose(J[0], 0.0)


def test_root_rotation_pi_about_z():
    theta = np.zeros((16, 3))
    theta[0] = [0, 0, np.pi]
    J = hm.skeleton(hm.HandParams(theta, np.zeros(10)))
    Rz = np.diag([-1.0, -1.0, 1.0])
    assert np.allclose(J, hm.default_tree().rest_joints @ Rz.T, atol=1e-12)


def test_all_multipliers_two_doubles_joints():
    tree = hm.default_tree()
    # the first basis column scales every bone by 0.1 per unit
    beta = np.zeros(10)
    beta[0] = 10.0
    assert np.allclose(hm.bone_multipliers(dc.constant(beta[None]), tree).value, 2.0)
    theta = _theta(np.random.default_rng(0))
    J1 = hm.skeleton(hm.HandParams(theta, np.zeros(10)))
    J2 = hm.skeleton(hm.HandParams(theta, beta))
    assert np.allclose(J2, 2 * J1, atol=1e-12)
    assert np.allclose(hm.bone_lengths(J2), 2 * hm.bone_lengths(J1))


def test_multipliers_are_clamped():
    lo, hi = hm.default_tree().multiplier_bounds
    m = hm.bone_multipliers(dc.constant(np.full((1, 10), 1e3))).value
    assert m.max() <= hi and hm.bone_multipliers(dc.constant(np.full((1, 10), -1e3))).value.min() >= lo


def test_axis_angle_examples():
    assert np.allclose(hm.rotation_matrix(np.zeros(3)), np.eye(3), atol=0)
    R = hm.rotation_matrix([0, 0, np.pi / 2])
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_rotation_is_proper(r):
    R = hm.rotation_matrix(np.array(r))
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(R) - 1) < 1e-12


def test_tiny_angles_use_series_without_nan():
    for mag in [0.0, 1e-12, 1e-9, 1e-8, 1e-7, 1e-3]:
        r = np.array([mag, -mag, 0.5 * mag])
        R = hm.rotation_matrix(r)
        assert np.all(np.isfinite(R))
        K = np.array([[0, -r[2], r[1]], [r[2], 0, -r[0]], [-r[1], r[0], 0]])
        assert np.allclose(R, np.eye(3) + K + K @ K / 2, atol=1e-14)


def test_bone_lengths_of_rest_are_offset_norms():
    tree = hm.default_tree()
    assert np.allclose(hm.bone_lengths(tree.rest_joints), np.linalg.norm(tree.rest_offsets, axis=1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_rotations_preserve_bone_lengths(seed):
    rng = np.random.default_rng(seed)
    J = hm.skeleton(hm.HandParams(_theta(rng, 1.0), np.zeros(10)))
    rest = np.linalg.norm(hm.default_tree().rest_offsets, axis=1)
    assert np.abs(hm.bone_lengths(J) - rest).max() < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_root_rotation_equivariance(seed):
    rng = np.random.default_rng(seed)
    theta, beta = _theta(rng), rng.normal(scale=0.3, size=10)
    extra = rng.normal(size=3)
    R = hm.rotation_matrix(extra)
    composed = theta.copy()
    # axis-angle of R @ R0
    from scipy.spatial.transform import Rotation
    composed[0] = Rotation.from_matrix(R @ hm.rotation_matrix(theta[0])).as_rotvec()
    J = hm.skeleton(hm.HandParams(theta, beta))
    J2 = hm.skeleton(hm.HandParams(composed, beta))
    assert np.abs(J2 - J @ R.T).max() < 1e-10


def test_batched_matches_unbatched():
    rng = np.random.default_rng(1)
    th, be = rng.normal(size=(3, 16, 3)) * 0.4, rng.normal(size=(3, 10)) * 0.3
    batched = hm.forward_kinematics(dc.constant(th), dc.constant(be)).value
    for i in range(3):
        assert np.allclose(batched[i], hm.skeleton(hm.HandParams(th[i], be[i])), atol=1e-14)


def test_fk_gradients():
    rng = np.random.default_rng(2)
    W = dc.constant(rng.normal(size=(2, 21, 3)))
    for _ in range(5):
        th, be = rng.normal(size=(2, 16, 3)) * 0.5, rng.normal(size=(2, 10)) * 0.3
        err = dc.check_gradients(lambda t, b: dc.reduce_sum(hm.forward_kinematics(t, b) * W), [th, be])
        assert err < 1e-4


def test_tree_json_round_trip_and_validation():
    import json
    tree = hm.default_tree()
    again = hm.KinematicTree.from_dict(json.loads(tree.to_json()))
    assert np.array_equal(again.parent, tree.parent)
    bad = json.loads(tree.to_json())
    bad["parent"][1] = 5
    bad["parent"][5] = 1
    with pytest.raises(ValueError, match="cycle"):
        hm.KinematicTree.from_dict(bad)
    bad = json.loads(tree.to_json())
    bad["version"] = 2
    with pytest.raises(ValueError):
        hm.KinematicTree.from_dict(bad)


def test_tree_order_and_counts():
    tree = hm.default_tree()
    assert len(tree.joint_names) == 21 and tree.joint_names[0] == "wrist"
    # each finger is a chain of four joints hanging off the wrist
    for f in range(5):
        chain = [1 + 4 * f + i for i in range(4)]
        assert tree.parent[chain[0]] == 0
        assert all(tree.parent[chain[i + 1]] == chain[i] for i in range(3))


def test_nonfinite_params_rejected():
    with pytest.raises(ValueError):
        hm.HandParams(np.full((16, 3), np.nan), np.zeros(10))
