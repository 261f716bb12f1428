import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoisynth.body import (
    BodyPose,
    PoseSequence,
    apply_global,
    load_pose_sequence,
    load_rig,
    part_vertices,
    posed_mesh,
    save_pose_sequence,
    save_rig,
    skin,
)
from hoisynth.errors import GeometryError
from hoisynth.fixtures import SMPL_PARTS, arms_forward_pose, hand_transform
from hoisynth.geometry import RigidTransform, signed_distance

from conftest import random_transform


def test_rest_pose_skins_to_template(rig):
    assert np.allclose(skin(rig, BodyPose.rest(rig.n_joints)), rig.template.vertices)


def test_root_translation_moves_every_vertex(rig):
    pose = BodyPose([0.1, -0.2, 0.3], np.zeros((rig.n_joints, 3)))
    assert np.allclose(skin(rig, pose) - rig.template.vertices, [0.1, -0.2, 0.3])


def test_each_part_moves_rigidly(rig):
    pose = arms_forward_pose(rig, pitch=-0.3, yaw=0.5, root=(0.2, 0.0, -0.1))
    hand = part_vertices(rig, "left_hand")
    g = hand_transform(rig, pose, "left_hand")
    assert np.allclose(skin(rig, pose)[hand], g.apply(rig.template.vertices[hand]), atol=1e-12)


def test_apply_global_matches_surface_transform(rig):
    rng = np.random.default_rng(0)
    pose = arms_forward_pose(rig, pitch=-0.2, yaw=0.3)
    g = random_transform(rng, 0.5)
    assert np.allclose(skin(rig, apply_global(rig, pose, g)), g.apply(skin(rig, pose)), atol=1e-10)


def test_template_is_watertight_enough_for_signs(rig):
    mesh = posed_mesh(rig, BodyPose.rest(rig.n_joints))
    inside = np.array([[0.0, 0.0, 0.0], [0.0, 0.30, 0.0]])
    assert np.all(signed_distance(mesh, inside) < 0)
    assert signed_distance(mesh, np.array([[0.0, 0.0, 1.0]]))[0] > 0


def test_rig_has_the_standard_parts(rig):
    assert rig.part_names == SMPL_PARTS
    assert set(np.unique(rig.part_labels)) == set(range(len(SMPL_PARTS)))


def test_unknown_part_is_reported(rig):
    with pytest.raises(ValueError, match="unknown body part"):
        part_vertices(rig, "tail")


def test_pose_with_wrong_joint_count_is_rejected(rig):
    with pytest.raises(GeometryError):
        skin(rig, BodyPose.rest(3))


def test_rig_file_round_trip(rig, tmp_path):
    save_rig(rig, tmp_path / "rig.json")
    back = load_rig(tmp_path / "rig.json")
    assert np.array_equal(back.template.vertices, rig.template.vertices)
    assert np.array_equal(back.weights, rig.weights)
    assert back.part_names == rig.part_names


def test_pose_sequence_file_round_trip_is_exact(rig, tmp_path):
    seq = PoseSequence(tuple(arms_forward_pose(rig, pitch=p, yaw=0.1 * p) for p in np.linspace(0, -0.5, 5)))
    save_pose_sequence(seq, tmp_path / "s.jsonl")
    assert load_pose_sequence(tmp_path / "s.jsonl") == seq


def test_pose_sequence_slicing_and_concatenation(rig):
    seq = PoseSequence(tuple(arms_forward_pose(rig, pitch=p) for p in np.linspace(0, -0.5, 6)))
    assert seq[:2] + seq[2:] == seq
    with pytest.raises(ValueError):
        seq + PoseSequence(seq.frames, 60.0)


angles = st.floats(-0.6, 0.6)


@settings(max_examples=25, deadline=None)
@given(angles, angles, st.tuples(angles, angles, angles))
def test_skinning_keeps_each_part_rigid(rig, pitch, yaw, root):
    verts = skin(rig, arms_forward_pose(rig, pitch=pitch, yaw=yaw, root=root))
    for name in ("left_hand", "spine2", "right_elbow"):
        ids = part_vertices(rig, name)
        a, b = verts[ids], rig.template.vertices[ids]
        da = np.linalg.norm(a[:, None] - a[None], axis=2)
        db = np.linalg.norm(b[:, None] - b[None], axis=2)
        assert np.allclose(da, db, atol=1e-10)
