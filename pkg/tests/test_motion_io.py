from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import euler_matrix, fk_matrix_chain
from virtimu.motion_io import (
    BvhParseError,
    ChannelPose,
    JointCsvError,
    MotionFormatError,
    MotionSequence,
    Skeleton,
    euler_to_matrix,
    forward_kinematics,
    parse_bvh,
    parse_joint_csv,
    reorder_skeleton_pose,
    to_z_up,
    write_bvh,
    write_joint_csv,
)
from virtimu.skeletons import smpl22


def test_parse_mini_bvh_structure(mini_bvh):
    skel, pose = parse_bvh(mini_bvh)
    assert skel.joint_names == ("hips", "spine", "leg", "foot")
    assert skel.parent_index == (-1, 0, 0, 2)
    np.testing.assert_array_equal(skel.rest_offset[2], [0.1, 0, -0.1])
    assert pose.n_frames == 3
    assert pose.frame_rate == pytest.approx(25.0)
    assert pose.rotation_orders == ("ZXY", "ZXY", "XYZ", "ZXY")
    # values land on the axis named by the channel line
    np.testing.assert_array_equal(pose.rotations[1, 0], [10, 0, 0])
    np.testing.assert_array_equal(pose.rotations[2, 2], [60, 0, 0])
    np.testing.assert_array_equal(pose.rotations[2, 3], [0, 0, -90])
    np.testing.assert_array_equal(pose.root_translation[:, 0], [0, 0.1, 0.2])


def test_scale_applies_to_offsets_and_translation(mini_bvh):
    skel, pose = parse_bvh(mini_bvh, scale=0.01)
    np.testing.assert_allclose(skel.rest_offset[3], [0, 0, -0.004])
    np.testing.assert_allclose(pose.root_translation[0], [0, 0, 0.01])


def test_identity_rotations_reproduce_rest_pose(body):
    n = 4
    pose = ChannelPose(30.0, np.zeros((n, 3)), np.zeros((n, body.n_joints, 3)))
    motion = forward_kinematics(body, pose)
    for f in range(n):
        np.testing.assert_array_equal(motion.positions[f], body.rest_positions())
    shifted = forward_kinematics(body, ChannelPose(30.0, np.full((n, 3), 0.5), np.zeros((n, body.n_joints, 3))))
    np.testing.assert_allclose(shifted.positions - 0.5, motion.positions, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["ZXY", "XYZ", "YZX", "ZYX"]))
def test_fk_matches_matrix_chain_and_keeps_bone_lengths(seed, order):
    body = smpl22()
    rng = np.random.default_rng(seed)
    angles = rng.uniform(-180, 180, (3, body.n_joints, 3))
    root = rng.normal(size=(3, 3))
    pose = ChannelPose(30.0, root, angles, (order,) * body.n_joints)
    motion = forward_kinematics(body, pose)
    for f in range(3):
        rots = [euler_matrix(angles[f, j], order) for j in range(body.n_joints)]
        ref = fk_matrix_chain(body.parent_index, body.rest_offset, root[f], rots)
        np.testing.assert_allclose(motion.positions[f], ref, atol=1e-12)
    for j, p in enumerate(body.parent_index):
        if p >= 0:
            bone = np.linalg.norm(motion.positions[:, j] - motion.positions[:, p], axis=-1)
            np.testing.assert_allclose(bone, np.linalg.norm(body.rest_offset[j]), atol=1e-9, rtol=0)


def test_euler_to_matrix_is_intrinsic():
    ang = np.array([30.0, -20.0, 75.0])
    np.testing.assert_allclose(euler_to_matrix(ang, "ZXY"), euler_matrix(ang, "ZXY"), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bvh_write_parse_round_trip(seed):
    body = smpl22()
    rng = np.random.default_rng(seed)
    pose = ChannelPose(30.0, rng.normal(size=(5, 3)), rng.uniform(-170, 170, (5, body.n_joints, 3)))
    parsed = parse_bvh(write_bvh(body, pose, precision=17))
    assert set(parsed[0].joint_names) == set(body.joint_names)
    # BVH lists joints depth first; restore the skeleton's order before comparing
    skel2, pose2 = reorder_skeleton_pose(*parsed, body.joint_names)
    assert skel2.parent_index == body.parent_index
    np.testing.assert_array_equal(pose2.rotations, pose.rotations)
    np.testing.assert_array_equal(pose2.root_translation, pose.root_translation)
    a, b = forward_kinematics(body, pose), forward_kinematics(skel2, pose2)
    np.testing.assert_allclose(a.positions, b.positions, atol=1e-12)


@pytest.mark.parametrize(
    "mutate, line",
    [
        (lambda t: t.replace("OFFSET 0.1 0 -0.1", "OFFSET 0.1 zero -0.1"), 17),
        (lambda t: t.replace("CHANNELS 3 Xrotation Yrotation Zrotation", "CHANNELS 3 Xposition Yrotation Zrotation"), 18),
        (lambda t: t.replace("0.1 0 1 10 0 0 5 5 5 30 0 0 0 0 90", "0.1 0 1 10 0 0 5 5 5 30 0 0 0 0"), 30),
        (lambda t: t.replace("Frames: 3", "Frames: 4"), 31),
        (lambda t: t.replace("CHANNELS 3 Zrotation Xrotation Yrotation\n    End", "CHANNELS 3 Qrotation Xrotation Yrotation\n    End"), 9),
        (lambda t: t.replace("OFFSET 0 0 -0.4", "OFFSET 0 0 0"), 21),
    ],
)
def test_errors_carry_line_numbers(mini_bvh, mutate, line):
    with pytest.raises(BvhParseError) as err:
        parse_bvh(mutate(mini_bvh))
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_missing_motion_and_multiple_roots(mini_bvh):
    with pytest.raises(BvhParseError, match="MOTION"):
        parse_bvh(mini_bvh.split("MOTION")[0])
    head, tail = mini_bvh.split("MOTION")
    with pytest.raises(BvhParseError, match="multiple roots"):
        parse_bvh(head + "ROOT other\n{\nOFFSET 0 0 0\n}\nMOTION" + tail)


def test_end_site_is_not_a_joint(mini_bvh):
    skel, _ = parse_bvh(mini_bvh)
    assert "spine" in skel.joint_names and skel.n_joints == 4


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_fuzzed_bvh_parses_or_raises_located_error(data):
    from conftest import MINI_BVH

    text = MINI_BVH
    for _ in range(data.draw(st.integers(1, 4))):
        i = data.draw(st.integers(0, len(text)))
        j = data.draw(st.integers(i, min(len(text), i + 8)))
        insert = data.draw(st.text(alphabet="{} \n0123456789.-eXYZrotationJOINT", max_size=6))
        text = text[:i] + insert + text[j:]
    try:
        skel, pose = parse_bvh(text)
    except BvhParseError as exc:
        assert exc.line is None or exc.line >= 1
        return
    assert pose.rotations.shape[1] == skel.n_joints


def test_joint_csv_reorders_to_requested_joints():
    text = "# frame_rate=25\nb_x,b_y,b_z,a_x,a_y,a_z\n1,2,3,4,5,6\n7,8,9,10,11,12\n"
    m = parse_joint_csv(text, ["a", "b"])
    assert m.joint_names == ("a", "b")
    assert m.frame_rate == 25.0
    np.testing.assert_array_equal(m.positions[0], [[4, 5, 6], [1, 2, 3]])
    assert parse_joint_csv(text, frame_rate=50.0).frame_rate == 50.0


@pytest.mark.parametrize(
    "text, match",
    [
        ("a_x,a_y,a_z\n1,2,3\n4,5,6\n", "frame rate"),
        ("# frame_rate=25\na_x,a_y\n1,2\n4,5\n", "missing column"),
        ("# frame_rate=25\na_x,a_y,a_z\n1,2,x\n4,5,6\n", "number"),
        ("# frame_rate=25\na_x,a_y,a_z\n1,2,3\n", "at least 2 frames"),
    ],
)
def test_joint_csv_errors(text, match):
    with pytest.raises(JointCsvError, match=match):
        parse_joint_csv(text)


def test_joint_csv_round_trip():
    rng = np.random.default_rng(3)
    m = MotionSequence(30.0, rng.normal(size=(6, 3, 3)), ("p", "q", "r"))
    back = parse_joint_csv(write_joint_csv(m))
    np.testing.assert_array_equal(back.positions, m.positions)
    assert back.frame_rate == 30.0


def test_y_up_conversion_is_a_proper_rotation():
    m = MotionSequence(10.0, np.array([[[1.0, 2.0, 3.0]], [[0.0, 1.0, 0.0]]]))
    z = to_z_up(m, "y")
    np.testing.assert_array_equal(z.positions[0, 0], [1.0, -3.0, 2.0])
    np.testing.assert_array_equal(z.positions[1, 0], [0.0, 0.0, 1.0])  # y-up "up" becomes +z
    basis = to_z_up(MotionSequence(1.0, np.eye(3)[None].repeat(2, 0)), "y").positions[0]
    assert np.linalg.det(basis) == pytest.approx(1.0)


def test_skeleton_validation():
    with pytest.raises(ValueError, match="one root"):
        Skeleton(("a", "b"), (-1, -1), np.ones((2, 3)))
    with pytest.raises(ValueError, match="cycle"):
        Skeleton(("a", "b", "c"), (-1, 2, 1), np.ones((3, 3)))
    with pytest.raises(ValueError, match="zero-length"):
        Skeleton(("a", "b"), (-1, 0), np.zeros((2, 3)))


def test_reorder_keeps_positions(mini_bvh):
    skel, pose = parse_bvh(mini_bvh)
    names = ("foot", "leg", "hips", "spine")
    s2, p2 = reorder_skeleton_pose(skel, pose, names)
    a = forward_kinematics(skel, pose).positions
    b = forward_kinematics(s2, p2).positions
    for k, n in enumerate(names):
        np.testing.assert_allclose(b[:, k], a[:, skel.index(n)], atol=1e-12)


def test_motion_errors_are_value_errors():
    assert issubclass(MotionFormatError, ValueError)
    with pytest.raises(ValueError):
        MotionSequence(30.0, np.zeros((1, 2, 3)))


def test_two_bone_chain_quarter_turn():
    chain = Skeleton(("root", "mid", "tip"), (-1, 0, 1), np.array([[0, 0, 0], [0, 1.0, 0], [0, 1.0, 0]]))
    angles = np.zeros((2, 3, 3))
    angles[:, 0] = [90.0, 0.0, 0.0]  # first channel of ZXY is z
    motion = forward_kinematics(chain, ChannelPose(30.0, np.zeros((2, 3)), angles, ("ZXY",) * 3))
    np.testing.assert_allclose(motion.positions[:, 2], [[-2.0, 0.0, 0.0]] * 2, atol=1e-12)
