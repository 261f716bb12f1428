"""Synthetic rig, objects and interaction sequences used by tests and the bundled demo."""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .body import BodyPose, BodyRig, PoseSequence, joint_transforms
from .geometry import RigidTransform, TriMesh, make_box, merge_meshes, rotvec_to_matrix

SMPL_PARTS = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar",
    "right_collar", "head", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hand", "right_hand",
)
SMPL_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

SHOULDER_Y = 0.42
SHOULDER_X = 0.18

# (joint position, box center, box size) for the left side and the midline, T-pose, metres.
# Boxes are disjoint so the merged surface is watertight.
_LAYOUT = {
    "pelvis": ((0, 0, 0), (0, 0, 0), (0.30, 0.14, 0.18)),
    "left_hip": ((0.09, -0.08, 0), (0.09, -0.265, 0), (0.13, 0.37, 0.14)),
    "spine1": ((0, 0.08, 0), (0, 0.115, 0), (0.28, 0.07, 0.17)),
    "left_knee": ((0.09, -0.46, 0), (0.09, -0.655, 0), (0.10, 0.37, 0.11)),
    "spine2": ((0, 0.16, 0), (0, 0.20, 0), (0.30, 0.08, 0.08)),
    "left_ankle": ((0.09, -0.86, 0), (0.09, -0.87, 0), (0.08, 0.04, 0.08)),
    "spine3": ((0, 0.25, 0), (0, 0.30, 0), (0.32, 0.10, 0.19)),
    "left_foot": ((0.09, -0.92, 0.06), (0.09, -0.925, 0.05), (0.09, 0.05, 0.22)),
    "neck": ((0, 0.45, 0), (0, 0.49, 0), (0.10, 0.08, 0.06)),
    "left_collar": ((0.04, 0.40, 0), (0.085, 0.395, 0), (0.13, 0.07, 0.06)),
    "head": ((0, 0.54, 0), (0, 0.64, 0.01), (0.18, 0.20, 0.20)),
    "left_shoulder": ((SHOULDER_X, SHOULDER_Y, 0), (0.30, 0.42, 0), (0.26, 0.08, 0.036)),
    "left_elbow": ((0.44, SHOULDER_Y, 0), (0.565, 0.42, 0), (0.23, 0.07, 0.036)),
    "left_wrist": ((0.69, SHOULDER_Y, 0), (0.70, 0.42, 0), (0.02, 0.06, 0.036)),
    "left_hand": ((0.72, SHOULDER_Y, 0), (0.78, 0.42, 0), (0.12, 0.04, 0.10)),
}
# Lattice overrides; the sparse chest keeps torso vertices away from a box held against it.
_SEGMENTS = {"left_hand": (2, 1, 1), "right_hand": (2, 1, 1), "spine3": (6, 1, 2)}


def _mirror(name: str) -> str | None:
    if name.startswith("left_"):
        return "right_" + name[5:]
    return None


def default_rig(spacing: float = 0.05) -> BodyRig:
    """24-part rig of disjoint lattice boxes, one rigidly bound box per joint."""
    joints = np.zeros((len(SMPL_PARTS), 3))
    boxes = {}
    for name, (joint, center, size) in _LAYOUT.items():
        for side, flip in ((name, 1.0), (_mirror(name), -1.0)):
            if side is None:
                continue
            j = SMPL_PARTS.index(side)
            joints[j] = (flip * joint[0], joint[1], joint[2])
            boxes[j] = ((flip * center[0], center[1], center[2]), size)
    meshes, labels = [], []
    for j in range(len(SMPL_PARTS)):
        center, size = boxes[j]
        segs = _SEGMENTS.get(SMPL_PARTS[j]) or tuple(max(1, int(round(s / spacing))) for s in size)
        box = make_box(center, size, segs)
        meshes.append(box)
        labels.append(np.full(box.n_vertices, j))
    template = merge_meshes(meshes)
    labels = np.concatenate(labels)
    weights = np.zeros((template.n_vertices, len(SMPL_PARTS)))
    weights[np.arange(template.n_vertices), labels] = 1.0
    return BodyRig(template, joints, SMPL_PARENTS, weights, labels, SMPL_PARTS)


def _rotvec(axis: str, angle: float) -> np.ndarray:
    return Rotation.from_euler(axis, angle).as_rotvec()


def arms_forward_pose(rig: BodyRig, pitch: float = 0.0, yaw: float = 0.0, root=(0.0, 0.0, 0.0)) -> BodyPose:
    """Both arms straight ahead (palms facing inward), raised by ``-pitch`` radians."""
    rots = np.zeros((rig.n_joints, 3))
    rots[0] = _rotvec("y", yaw)
    ls = SMPL_PARTS.index("left_shoulder")
    rs = SMPL_PARTS.index("right_shoulder")
    rx = Rotation.from_euler("x", pitch)
    rots[ls] = (rx * Rotation.from_euler("y", -np.pi / 2)).as_rotvec()
    rots[rs] = (rx * Rotation.from_euler("y", np.pi / 2)).as_rotvec()
    return BodyPose(np.asarray(root, dtype=np.float64), rots)


def hand_transform(rig: BodyRig, pose: BodyPose, part: str = "left_hand") -> RigidTransform:
    g = joint_transforms(rig, pose)[SMPL_PARTS.index(part)]
    # Remove the rest offset so the transform maps rest-space points to posed points.
    rest = np.eye(4)
    rest[:3, 3] = -rig.joints[SMPL_PARTS.index(part)]
    return RigidTransform.from_matrix(g @ rest)


# Hand inner faces sit at |x| = 0.13 with the arms forward; palm vertices at z = 0.54, 0.60, 0.66
# and y = 0.40, 0.44.
GRIP_HALF_WIDTH = 0.13


def grasp_box(height: float = 0.20, z_front: float = 0.78, z_back: float = 0.54, y_spacing: float = 0.02,
              z_spacing: float = 0.06, y_center: float = SHOULDER_Y) -> tuple[TriMesh, np.ndarray]:
    """Box (in its own frame, centred) gripped between the palms, plus its center in the rest grip.

    Lattice spacings must divide the palm vertex offsets so contact vertices coincide.
    """
    size = (2 * GRIP_HALF_WIDTH, height, z_front - z_back)
    segs = (10, int(round(height / y_spacing)), int(round((z_front - z_back) / z_spacing)))
    center = np.array([0.0, y_center, (z_front + z_back) / 2])
    return make_box((0, 0, 0), size, segs), center


def gripped_object_pose(rig: BodyRig, pose: BodyPose, rest_center) -> RigidTransform:
    """Pose of a box welded to the hands: rest grip (pitch 0, identity root) carried along."""
    rest = arms_forward_pose(rig)
    g_now = hand_transform(rig, pose)
    g_rest = hand_transform(rig, rest)
    place = RigidTransform(np.eye(3), np.asarray(rest_center, dtype=np.float64))
    return g_now @ g_rest.inverse() @ place


def carry_sequence(rig: BodyRig, n_frames: int, rng: np.random.Generator, frame_rate: float = 30.0,
                   speed_max: float = 1.0, yaw_rate_max: float = 1.0, pitch_rate_max: float = 1.0):
    """Walk/turn/lift motion with arms forward; returns PoseSequence and per-frame pitch."""
    dt = 1.0 / frame_rate
    heading = rng.uniform(-np.pi, np.pi)
    yaw0 = rng.uniform(-np.pi, np.pi)
    speed = rng.uniform(0.0, speed_max)
    yaw_rate = rng.uniform(-yaw_rate_max, yaw_rate_max)
    pitch0 = rng.uniform(-0.6, 0.3)
    pitch_rate = rng.uniform(-pitch_rate_max, pitch_rate_max)
    lift_rate = rng.uniform(-0.2, 0.2)
    origin = rng.uniform(-1.0, 1.0, 3) * np.array([1.0, 0.1, 1.0])
    frames = []
    for i in range(n_frames):
        t = i * dt
        root = origin + np.array([np.sin(heading) * speed * t, lift_rate * t, np.cos(heading) * speed * t])
        frames.append(arms_forward_pose(rig, pitch=pitch0 + pitch_rate * t, yaw=yaw0 + yaw_rate * t, root=root))
    return PoseSequence(tuple(frames), frame_rate)


def penetration_fixture(rig: BodyRig, index: int, n_frames: int = 8, shift: float = 0.05):
    """Carry sequence whose box is pushed ``shift`` metres back into the chest.

    The box spans the whole chest in height and reaches out past the palms, so the way out
    is straight forward. Returns
    (human, seeded object poses, box mesh, unseeded object poses).
    """
    from .worldmodel.state import ObjectStateSeq

    rng = np.random.default_rng(1000 + index)
    # The clean box clears the chest by 2.5 cm, so the seeded box sinks 2.5 cm into it.
    z_back = 0.12
    y_lo = (0.20, 0.22)[index % 2]
    y_hi = (0.50, 0.48)[(index // 2) % 2]
    mesh, center = grasp_box(height=y_hi - y_lo, z_front=0.78, z_back=z_back, z_spacing=0.01,
                             y_center=(y_lo + y_hi) / 2)
    heading = rng.uniform(-np.pi, np.pi)
    speed = rng.uniform(0.2, 0.8)
    yaw0 = rng.uniform(-0.15, 0.15)
    yaw_rate = rng.uniform(-0.3, 0.3)
    frames = []
    for i in range(n_frames):
        t = i / 30.0
        root = np.array([np.sin(heading) * speed * t, 0.0, np.cos(heading) * speed * t])
        frames.append(arms_forward_pose(rig, yaw=yaw0 + yaw_rate * t, root=root))
    human = PoseSequence(tuple(frames), 30.0)
    clean, seeded = [], []
    for pose in human.frames:
        g = gripped_object_pose(rig, pose, center)
        forward = rotvec_to_matrix(pose.joint_rotations[0])[:, 2]
        clean.append(g)
        seeded.append(RigidTransform(g.rotation, g.translation - shift * forward))
    return human, ObjectStateSeq(tuple(seeded)), mesh, ObjectStateSeq(tuple(clean))


def lift_clip(rig: BodyRig, n_frames: int = 16, pitch_end: float = -0.45, frame_rate: float = 30.0) -> PoseSequence:
    """Stand still and raise a gripped object by pitching both arms up."""
    pitches = np.linspace(0.0, pitch_end, n_frames)
    return PoseSequence(tuple(arms_forward_pose(rig, pitch=p) for p in pitches), frame_rate)


def grasp_fixture_set(rig: BodyRig, n: int = 20, seed: int = 0, shift: float = 0.01, turn: float = 0.05):
    """Two-hand box grips for the initial-pose fit.

    Each item records a contact map from a welded grip, moves the body somewhere else and
    starts the fit from the true object pose disturbed by up to ``shift`` metres and ``turn``
    radians. Items are dicts with keys map, mesh, body (query pose), start, truth.
    """
    from .body import apply_global, skin
    from .retrieval import InteractionDB, ingest_frame
    from .worldmodel.corpus import box_variants

    rng = np.random.default_rng(seed)
    boxes = box_variants()
    items = []
    for i in range(n):
        mesh, center = boxes[i % len(boxes)]
        rec_pose = arms_forward_pose(rig, pitch=rng.uniform(-0.5, 0.2), yaw=rng.uniform(-np.pi, np.pi))
        db = InteractionDB(rig.part_names, {"box": mesh})
        cmap = ingest_frame(db, skin(rig, rec_pose), gripped_object_pose(rig, rec_pose, center),
                            ["left_hand", "right_hand"], "box", source_id=f"grip_{i:03d}")
        move = RigidTransform.from_rotvec(rng.normal(size=3) * 0.5, rng.normal(size=3) * 0.5)
        query = apply_global(rig, arms_forward_pose(rig, pitch=rng.uniform(-0.5, 0.2)), move)
        truth = gripped_object_pose(rig, query, center)
        axis = rng.normal(size=3)
        noise = RigidTransform.from_rotvec(axis / np.linalg.norm(axis) * rng.uniform(0, turn),
                                           rng.uniform(-shift, shift, 3))
        start = RigidTransform(noise.rotation @ truth.rotation, truth.translation + noise.translation)
        items.append({"map": cmap, "mesh": mesh, "body": query, "start": start, "truth": truth})
    return items
