import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hoisynth.body import skin
from hoisynth.fixtures import arms_forward_pose, carry_sequence, grasp_box, gripped_object_pose
from hoisynth.geometry import RigidTransform, build_sdf, geodesic_angle, make_box, query_sdf
from hoisynth.worldmodel import (
    ControlSet,
    DynamicsConfig,
    DynamicsNet,
    ObjectStateSeq,
    TrainConfig,
    UntrainedNetError,
    control_features,
    hold_last,
    learned_step,
    load_net,
    oracle_step,
    pose_window,
    sample_control_vertices,
    save_net,
    train_dynamics,
    transform_from_record,
    transform_to_record,
)
from hoisynth.worldmodel.corpus import load_corpus, synthetic_samples, write_corpus

from conftest import random_transform


def greedy_oracle(frames, grid, poses, d1, d2):
    """Loop-by-loop reference for the control-vertex subset."""
    cand = []
    for v in range(frames.shape[1]):
        if all(abs(float(query_sdf(grid, p.apply_inverse(frames[h, v][None]))[0])) <= d1
               for h, p in enumerate(poses)):
            cand.append(v)
    if not cand:
        return []

    def dist(a, b):
        out = np.inf
        for h in range(len(frames)):
            dx, dy, dz = (float(frames[h, a, i]) - float(frames[h, b, i]) for i in range(3))
            out = min(out, math.sqrt(dx * dx + dy * dy + dz * dz))
        return out

    chosen = [cand[0]]
    while True:
        best, best_gap = None, -1.0
        for c in cand:
            gap = min(dist(c, s) for s in chosen)
            if gap > best_gap:
                best, best_gap = c, gap
        if best_gap < d2:
            return chosen
        chosen.append(best)


@pytest.fixture(scope="module")
def box_setup():
    mesh, center = grasp_box()
    return mesh, center, build_sdf(mesh, 0.01, padding=0.05)


def test_sampling_matches_oracle_and_constraints(rig, box_setup):
    mesh, center, grid = box_setup
    rng = np.random.default_rng(0)
    human = carry_sequence(rig, 3, rng)
    frames = np.stack([skin(rig, f) for f in human.frames])
    poses = [gripped_object_pose(rig, f, center) for f in human.frames]
    got = sample_control_vertices(frames, grid, poses, 0.02, 0.05)
    assert list(got) == greedy_oracle(frames, grid, poses, 0.02, 0.05)
    assert len(got) >= 3
    for h, p in enumerate(poses):
        assert np.all(np.abs(query_sdf(grid, p.apply_inverse(frames[h, got]))) <= 0.02)
        d = np.linalg.norm(frames[h, got][:, None] - frames[h, got][None], axis=2)
        assert np.all(d[~np.eye(len(got), dtype=bool)] >= 0.05)


def test_sampling_far_object_gives_no_controls(rig, box_setup):
    mesh, center, grid = box_setup
    pose = arms_forward_pose(rig)
    far = RigidTransform(np.eye(3), [10.0, 0.0, 0.0])
    assert sample_control_vertices(skin(rig, pose)[None], grid, [far]).size == 0


def test_sampling_rejects_bad_radii(box_setup):
    _, _, grid = box_setup
    with pytest.raises(ValueError):
        sample_control_vertices(np.zeros((1, 3, 3)), grid, [RigidTransform.identity()], delta1=0.0)


def _features(traj, poses, mesh, rig):
    ids = np.arange(traj.shape[1])
    return control_features(rig, ids, traj, mesh, poses)


def test_relative_velocity_cases(rig):
    mesh = make_box((0, 0, 0), (0.2, 0.2, 0.2), (2, 2, 2))
    static = [RigidTransform.identity()] * 3
    still = np.tile(np.array([[[0.2, 0.0, 0.0]]]), (3, 1, 1))
    assert np.all(_features(still, static, mesh, rig).rel_velocity == 0)

    slide = [RigidTransform(np.eye(3), [0.05 * i, 0.01 * i, 0]) for i in range(3)]
    along = np.stack([p.apply(still[0]) for p in slide])
    assert np.allclose(_features(along, slide, mesh, rig).rel_velocity, 0, atol=1e-12)

    # Under rotation the offset turns too, so only a vertex sitting on the object cancels.
    spin = [RigidTransform.from_rotvec([0, 0.1 * i, 0], [0.05 * i, 0, 0]) for i in range(3)]
    corner = np.stack([p.apply(np.array([[0.1, 0.1, 0.1]])) for p in spin])
    assert np.allclose(_features(corner, spin, mesh, rig).rel_velocity, 0, atol=1e-12)

    moving = np.stack([[[0.3 + i / 30.0, 0.0, 0.0]] for i in range(3)])
    vel = _features(moving, static, mesh, rig).rel_velocity
    assert np.allclose(vel, [[[1 / 30.0, 0, 0]]] * 3)


def test_surface_distance_is_exact(rig):
    mesh = make_box((0, 0, 0), (0.2, 0.2, 0.2))
    traj = np.array([[[0.25, 0.0, 0.0], [0.0, 0.0, 0.0]]])
    cs = _features(traj, [RigidTransform.identity()], mesh, rig)
    assert np.allclose(cs.surface_dist, [[0.15, 0.1]])


def test_window_helpers():
    assert hold_last([1, 2], 4) == [1, 2, 2, 2]
    assert pose_window([1, 2, 3], 2, 3) == [2, 3, 3, 3, 3]
    with pytest.raises(ValueError):
        hold_last([], 2)


def welded(rig, rng, n, center):
    human = carry_sequence(rig, n, rng)
    return human, ObjectStateSeq(tuple(gripped_object_pose(rig, f, center) for f in human.frames))


def test_oracle_is_exact_on_welded_carry(rig, box_setup):
    mesh, center, grid = box_setup
    rng = np.random.default_rng(1)
    for _ in range(3):
        human, obj = welded(rig, rng, 16, center)
        verts = np.stack([skin(rig, f) for f in human.frames])
        ids = sample_control_vertices(verts[:4], grid, obj.frames[:4])
        cs = control_features(rig, ids, verts[:, ids], mesh, pose_window(obj.frames[:4], 4, 12))
        pred = oracle_step(obj[:4], cs)
        assert np.abs(pred.translations - obj[4:].translations).max() < 1e-6
        assert geodesic_angle(pred.rotations, obj[4:].rotations).max() < 1e-6


def test_oracle_holds_pose_without_enough_controls():
    prev = ObjectStateSeq((RigidTransform.from_rotvec([0, 0.2, 0], [1, 2, 3]),) * 2)
    traj = np.random.default_rng(0).normal(size=(5, 2, 3))
    cs = ControlSet(np.arange(2), traj, np.zeros((2, 3)), np.zeros((5, 2)), np.zeros((5, 2, 3)))
    out = oracle_step(prev, cs)
    assert len(out) == 3 and out == ObjectStateSeq((prev[-1],) * 3)


def test_state_record_round_trip():
    p = random_transform(np.random.default_rng(2))
    back = transform_from_record(transform_to_record(p))
    assert np.array_equal(back.rotation, p.rotation) and np.array_equal(back.translation, p.translation)


def test_dynamics_config_validation():
    with pytest.raises(ValueError):
        DynamicsConfig(m=0)
    with pytest.raises(ValueError):
        DynamicsConfig(history=4, future=2)


@pytest.fixture(scope="module")
def tiny_samples(rig):
    return synthetic_samples(24, 4, 12, seed=3, rig=rig)


def test_untrained_net_refuses_to_predict(tiny_samples):
    s = tiny_samples[0]
    with pytest.raises(UntrainedNetError):
        learned_step(DynamicsNet(4, 12), s.prev, s.controls)


def test_training_is_deterministic_and_file_round_trip(tiny_samples, tmp_path):
    cfg = TrainConfig(epochs=3, seed=5)
    a, loss_a, _ = train_dynamics(tiny_samples, 4, 12, cfg)
    b, loss_b, _ = train_dynamics(tiny_samples, 4, 12, cfg)
    assert loss_a == loss_b
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    save_net(a, tmp_path / "n.net")
    back = load_net(tmp_path / "n.net")
    s = tiny_samples[1]
    assert learned_step(back, s.prev, s.controls) == learned_step(a, s.prev, s.controls)


def test_net_file_rejects_foreign_bytes(tmp_path):
    (tmp_path / "x.net").write_bytes(b"NOTANET!" + bytes(16))
    with pytest.raises(ValueError):
        load_net(tmp_path / "x.net")


def test_learned_step_checks_horizons(tiny_samples):
    net, _, _ = train_dynamics(tiny_samples[:4], 4, 12, TrainConfig(epochs=1))
    s = tiny_samples[0]
    with pytest.raises(ValueError):
        learned_step(net, s.prev[1:], s.controls)


def test_corpus_file_round_trip(tmp_path):
    path = write_corpus(tmp_path / "c", n=3, n_frames=16, seed=0)
    samples = load_corpus(path, 4, 12)
    assert len(samples) == 3
    assert all(len(s.prev) == 4 and len(s.next) == 12 for s in samples)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 8))
def test_oracle_follows_any_rigid_motion_of_its_controls(seed, n):
    rng = np.random.default_rng(seed)
    start = random_transform(rng)
    motions = [random_transform(rng, 0.3) for _ in range(3)]
    pts = rng.normal(size=(n, 3)) * 0.2
    traj = np.stack([pts] + [m.apply(pts) for m in motions])
    cs = ControlSet(np.arange(n), traj, np.zeros((n, 3)), np.zeros((4, n)), np.zeros((4, n, 3)))
    out = oracle_step(ObjectStateSeq((start,)), cs)
    for got, m in zip(out.frames, motions):
        want = m @ start
        assert np.abs(got.translation - want.translation).max() < 1e-9
        assert geodesic_angle(got.rotation[None], want.rotation[None])[0] < 1e-9
