import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import Delaunay
from scipy.spatial.transform import Rotation

from stabshape import quat
from stabshape.errors import InputError, StructuralError
from stabshape.skeleton import (
    ROOT,
    JointSpec,
    Pose,
    PoseArrays,
    SkeletonSpec,
    TrajectorySegment,
    bundled_skeleton,
    center_of_mass,
    check_pose,
    forward_kinematics,
    forward_kinematics_arrays,
    skeleton_from_dict,
    skeleton_to_dict,
    zero_pose,
)

from conftest import random_arrays

X = (1.0, 0.0, 0.0)


def chain(kinds, offsets, masses=None, axes=None):
    masses = masses or [1.0] * len(kinds)
    axes = axes or [X] * len(kinds)
    joints = tuple(
        JointSpec(f"j{i}", i - 1 if i else ROOT, k, tuple(o), m, a if k == "revolute" else None)
        for i, (k, o, m, a) in enumerate(zip(kinds, offsets, masses, axes))
    )
    return SkeletonSpec("chain", joints, (len(joints) - 1,))


# ---------------------------------------------------------------- quaternions


def test_quat_matches_scipy():
    rng = np.random.default_rng(0)
    a = quat.normalize(rng.normal(size=(50, 4)))
    b = quat.normalize(rng.normal(size=(50, 4)))
    v = rng.normal(size=(50, 3))

    def sp(q):
        return Rotation.from_quat(q[:, [1, 2, 3, 0]])

    np.testing.assert_allclose(quat.to_matrix(a), sp(a).as_matrix(), atol=1e-12)
    np.testing.assert_allclose(quat.rotate(a, v), sp(a).apply(v), atol=1e-12)
    ab = quat.mul(a, b)
    np.testing.assert_allclose(quat.to_matrix(ab), (sp(a) * sp(b)).as_matrix(), atol=1e-12)
    np.testing.assert_allclose(quat.log(a), sp(quat.canonical(a)).as_rotvec(), atol=1e-10)
    rv = rng.normal(size=(50, 3))
    np.testing.assert_allclose(quat.to_matrix(quat.exp(rv)), Rotation.from_rotvec(rv).as_matrix(), atol=1e-12)


def test_quat_small_angles_and_canonical():
    tiny = np.array([1e-10, 0.0, 0.0])
    np.testing.assert_allclose(quat.log(quat.exp(tiny)), tiny, rtol=1e-8)
    np.testing.assert_array_equal(quat.log(quat.IDENTITY), np.zeros(3))
    q = np.array([-0.5, 0.5, 0.5, 0.5])
    np.testing.assert_array_equal(quat.canonical(q), -q)
    assert quat.angle_between(q, -q) == 0.0


# ---------------------------------------------------------------- structure


def test_skeleton_invariants():
    with pytest.raises(StructuralError):
        JointSpec("a", ROOT, "revolute", (0, 0, 0), axis=(1.0, 1e-4, 0.0))
    with pytest.raises(StructuralError):
        JointSpec("a", ROOT, "hinge", (0, 0, 0))
    a = JointSpec("a", ROOT, "fixed", (0, 0, 0))
    with pytest.raises(StructuralError):
        SkeletonSpec("s", (a, JointSpec("b", ROOT, "fixed", (0, 0, 0))), (0,))
    with pytest.raises(StructuralError):
        SkeletonSpec("s", (a, JointSpec("a", 0, "fixed", (0, 0, 0))), (0,))
    with pytest.raises(StructuralError):
        SkeletonSpec("s", (a, JointSpec("b", 1, "fixed", (0, 0, 0))), (0,))
    with pytest.raises(StructuralError):
        SkeletonSpec("s", (a,), ())
    with pytest.raises(StructuralError):
        SkeletonSpec("s", (JointSpec("a", ROOT, "fixed", (0, 0, 0), mass=0.0),), (0,))


@pytest.mark.parametrize("name", ["human", "planar_biped", "pendulum3", "mini_humanoid"])
def test_bundled_skeletons_round_trip(name):
    skel = bundled_skeleton(name)
    again = skeleton_from_dict(skeleton_to_dict(skel))
    assert again == skel


def test_pose_checks():
    skel = chain(["revolute", "spherical"], [(0, 0, 1), (0, 0, 1)])
    good = Pose(np.zeros(3), quat.IDENTITY.copy(), (0.3, quat.IDENTITY.copy()))
    check_pose(skel, good)
    with pytest.raises(StructuralError):
        forward_kinematics(skel, Pose(np.zeros(3), quat.IDENTITY, (0.3,)))
    with pytest.raises(StructuralError):
        check_pose(skel, Pose(np.zeros(3), quat.IDENTITY, (0.3, np.array([1.0, 0.1, 0, 0]))))
    with pytest.raises(StructuralError):
        check_pose(skel, Pose(np.zeros(3), np.array([0.9, 0, 0, 0]), (0.3, quat.IDENTITY)))
    with pytest.raises(InputError):
        forward_kinematics(skel, Pose(np.zeros(3), quat.IDENTITY, (np.nan, quat.IDENTITY)))
    with pytest.raises(StructuralError):
        TrajectorySegment(skel, ())


# ---------------------------------------------------------------- forward kinematics


def test_single_revolute_at_zero():
    skel = chain(["revolute"], [(0.1, 0.2, 0.3)])
    (jp,) = forward_kinematics(skel, zero_pose(skel))
    np.testing.assert_array_equal(jp.position, [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(jp.orientation, quat.IDENTITY)


def test_two_link_quarter_turn():
    # hand computation: R_x(pi/2) maps (0,0,1) to (0,-1,0), so the second
    # joint sits at (0,0,1) + (0,-1,0)
    skel = chain(["revolute", "revolute"], [(0, 0, 1), (0, 0, 1)])
    pose = Pose(np.zeros(3), quat.IDENTITY.copy(), (np.pi / 2, 0.0))
    a, b = forward_kinematics(skel, pose)
    np.testing.assert_allclose(a.position, [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(b.position, [0, -1, 1], atol=1e-15)
    np.testing.assert_allclose(b.position - a.position, [0, -1, 0], atol=1e-15)


def test_spherical_child_offset():
    rng = np.random.default_rng(3)
    skel = chain(["spherical", "fixed"], [(0, 0, 0), (0.3, -0.2, 0.5)])
    for _ in range(20):
        q = quat.normalize(rng.normal(size=4))
        root = rng.normal(size=3)
        jps = forward_kinematics(skel, Pose(root, quat.IDENTITY.copy(), (q,)))
        expected = root + Rotation.from_quat(q[[1, 2, 3, 0]]).apply([0.3, -0.2, 0.5])
        np.testing.assert_allclose(jps[1].position, expected, atol=1e-12)


def test_zero_pose_prefix_sums(human):
    pos, ori = forward_kinematics_arrays(human, PoseArrays.from_poses(human, [zero_pose(human)]))
    for i, j in enumerate(human.joints):
        expect = np.zeros(3)
        k = i
        while k != ROOT:
            expect += human.offsets[k]
            k = human.parents[k]
        np.testing.assert_allclose(pos[0, i], expect, atol=1e-15)
    np.testing.assert_array_equal(ori[0], np.tile(quat.IDENTITY, (human.n_joints, 1)))
    assert all(np.all(r == 0) or np.array_equal(r, quat.IDENTITY) for r in zero_pose(human).joint_rotations)


def test_fk_equivariance_and_unit_norm(human):
    rng = np.random.default_rng(7)
    arrays = random_arrays(human, rng, T=50, angle_sigma=2.0, rot_sigma=2.0)
    pos, ori = forward_kinematics_arrays(human, arrays)
    np.testing.assert_allclose(np.linalg.norm(ori, axis=-1), 1.0, atol=1e-9)
    assert np.all(ori[..., 0] >= 0)

    g_q = quat.exp(rng.normal(size=(50, 3)))
    g_t = rng.normal(size=(50, 3))
    moved = PoseArrays(
        g_t + quat.rotate(g_q, arrays.root_translation),
        quat.mul(g_q, arrays.root_orientation),
        arrays.angles,
        arrays.spherical,
    )
    pos2, ori2 = forward_kinematics_arrays(human, moved)
    np.testing.assert_allclose(pos2, g_t[:, None] + quat.rotate(g_q[:, None], pos), atol=1e-9)
    np.testing.assert_allclose(ori2, quat.canonical(quat.mul(g_q[:, None], ori)), atol=1e-9)


def test_fk_list_matches_arrays(human):
    rng = np.random.default_rng(1)
    arrays = random_arrays(human, rng, T=3)
    pos, ori = forward_kinematics_arrays(human, arrays)
    for t, pose in enumerate(arrays.to_poses(human)):
        jps = forward_kinematics(human, pose)
        np.testing.assert_array_equal(np.array([j.position for j in jps]), pos[t])
        np.testing.assert_array_equal(np.array([j.orientation for j in jps]), ori[t])


# ---------------------------------------------------------------- centre of mass


def test_com_examples():
    two = chain(["fixed", "fixed"], [(0, 0, 0), (2, 0, 0)])
    np.testing.assert_array_equal(center_of_mass(two, forward_kinematics(two, zero_pose(two))), [1, 0, 0])
    one = chain(["fixed"], [(0.4, 0.5, 0.6)])
    np.testing.assert_array_equal(center_of_mass(one, forward_kinematics(one, zero_pose(one))), [0.4, 0.5, 0.6])
    three = chain(["fixed"] * 3, [(0, 0, 0), (1, 0, 0), (1, 0, 0)], masses=[1.0, 1.0, 2.0])
    com = center_of_mass(three, forward_kinematics(three, zero_pose(three)))
    assert com[0] == 1.25
    with pytest.raises(StructuralError):
        center_of_mass(three, [])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_com_translation_equivariant_and_in_hull(seed):
    rng = np.random.default_rng(seed)
    skel = bundled_skeleton("mini_humanoid")
    arrays = random_arrays(skel, rng)
    pos, _ = forward_kinematics_arrays(skel, arrays)
    com = center_of_mass(skel, pos[0])
    shift = rng.normal(size=3)
    np.testing.assert_allclose(center_of_mass(skel, pos[0] + shift), com + shift, atol=1e-12)
    assert Delaunay(pos[0]).find_simplex(com) >= 0
