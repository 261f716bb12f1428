"""Articulated, linear-blend-skinned body rig standing in for an SMPL-family model."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GeometryError
from .geometry import RigidTransform, SdfGrid, TriMesh, build_sdf, canonical_rotvec, load_obj, save_obj
from .geometry.transforms import rotvec_to_matrix


@dataclass(frozen=True, eq=False)
class BodyRig:
    template: TriMesh
    joints: np.ndarray  # (J, 3) rest positions
    parents: np.ndarray  # (J,), parents[0] == -1
    weights: np.ndarray  # (V, J) dense skinning weights
    part_labels: np.ndarray  # (V,) index into part_names
    part_names: tuple[str, ...]

    def __post_init__(self):
        joints = np.array(self.joints, dtype=np.float64).reshape(-1, 3)
        parents = np.array(self.parents, dtype=np.int64).reshape(-1)
        weights = np.array(self.weights, dtype=np.float64)
        labels = np.array(self.part_labels, dtype=np.int64).reshape(-1)
        names = tuple(self.part_names)
        n_v, n_j = self.template.n_vertices, len(joints)
        if len(parents) != n_j or parents[0] != -1:
            raise GeometryError("parents must have one entry per joint with parents[0] == -1")
        for j in range(1, n_j):
            if not 0 <= parents[j] < j:
                raise GeometryError(f"joint {j}: parent must precede it (got {parents[j]})")
        if weights.shape != (n_v, n_j):
            raise GeometryError(f"weights must be ({n_v}, {n_j}), got {weights.shape}")
        if weights.min() < 0 or np.abs(weights.sum(axis=1) - 1.0).max() > 1e-6:
            raise GeometryError("skin weights must be nonnegative with unit row sums")
        if len(names) < 2 or len(set(names)) != len(names):
            raise GeometryError("need at least two distinct part names")
        if labels.shape != (n_v,) or labels.min() < 0 or labels.max() >= len(names):
            raise GeometryError("every vertex needs a valid part label")
        for arr in (joints, parents, weights, labels):
            arr.flags.writeable = False
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "part_labels", labels)
        object.__setattr__(self, "part_names", names)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_vertices(self) -> int:
        return self.template.n_vertices

    @property
    def faces(self) -> np.ndarray:
        return self.template.faces


@dataclass(frozen=True, eq=False)
class BodyPose:
    root_translation: np.ndarray
    joint_rotations: np.ndarray  # (J, 3) axis-angle, joint 0 is the global orientation

    def __post_init__(self):
        t = np.array(self.root_translation, dtype=np.float64).reshape(3)
        r = canonical_rotvec(np.array(self.joint_rotations, dtype=np.float64).reshape(-1, 3))
        t.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "root_translation", t)
        object.__setattr__(self, "joint_rotations", r)

    @classmethod
    def rest(cls, n_joints: int) -> "BodyPose":
        return cls(np.zeros(3), np.zeros((n_joints, 3)))

    def params(self) -> np.ndarray:
        return np.concatenate([self.root_translation, self.joint_rotations.ravel()])

    @classmethod
    def from_params(cls, params) -> "BodyPose":
        p = np.asarray(params, dtype=np.float64)
        return cls(p[:3], p[3:].reshape(-1, 3))

    def __eq__(self, other):
        return (
            isinstance(other, BodyPose)
            and np.array_equal(self.root_translation, other.root_translation)
            and np.array_equal(self.joint_rotations, other.joint_rotations)
        )


@dataclass(frozen=True, eq=False)
class PoseSequence:
    frames: tuple[BodyPose, ...]
    frame_rate: float = 30.0

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("pose sequence must be non-empty")
        if self.frame_rate <= 0:
            raise ValueError("frame rate must be positive")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return PoseSequence(self.frames[item], self.frame_rate)
        return self.frames[item]

    def __add__(self, other: "PoseSequence") -> "PoseSequence":
        if other.frame_rate != self.frame_rate:
            raise ValueError("frame rates differ")
        return PoseSequence(self.frames + other.frames, self.frame_rate)

    def __eq__(self, other):
        return (
            isinstance(other, PoseSequence)
            and self.frame_rate == other.frame_rate
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.frames, other.frames))
        )

    def params(self) -> np.ndarray:
        return np.stack([f.params() for f in self.frames])

    @classmethod
    def from_params(cls, params, frame_rate=30.0) -> "PoseSequence":
        return cls(tuple(BodyPose.from_params(p) for p in np.asarray(params)), frame_rate)


def joint_transforms(rig: BodyRig, pose: BodyPose) -> np.ndarray:
    """World transform (J, 4, 4) for every joint."""
    if pose.joint_rotations.shape[0] != rig.n_joints:
        raise GeometryError(f"pose has {pose.joint_rotations.shape[0]} joints, rig has {rig.n_joints}")
    rots = rotvec_to_matrix(pose.joint_rotations)
    g = np.zeros((rig.n_joints, 4, 4))
    for j in range(rig.n_joints):
        local = np.eye(4)
        local[:3, :3] = rots[j]
        p = rig.parents[j]
        local[:3, 3] = rig.joints[j] - (rig.joints[p] if p >= 0 else 0.0)
        g[j] = local if p < 0 else g[p] @ local
    g[:, :3, 3] += pose.root_translation
    return g


def skin(rig: BodyRig, pose: BodyPose) -> np.ndarray:
    """Linear-blend-skinned vertex positions (V, 3)."""
    g = joint_transforms(rig, pose)
    # Bind transform removes the rest joint position.
    a = g.copy()
    a[:, :3, 3] -= np.einsum("jab,jb->ja", g[:, :3, :3], rig.joints)
    blended = np.einsum("vj,jab->vab", rig.weights, a)
    v = rig.template.vertices
    return np.einsum("vab,vb->va", blended[:, :3, :3], v) + blended[:, :3, 3]


def posed_mesh(rig: BodyRig, pose: BodyPose) -> TriMesh:
    return TriMesh(skin(rig, pose), rig.faces)


def apply_global(rig: BodyRig, pose: BodyPose, g: RigidTransform) -> BodyPose:
    """Pose whose skinned surface is ``g`` applied to the surface of ``pose``."""
    r0 = rotvec_to_matrix(pose.joint_rotations[0])
    new_r0 = RigidTransform(g.rotation @ r0, np.zeros(3)).rotvec()
    j0 = rig.joints[0]
    new_t = g.rotation @ (j0 + pose.root_translation) + g.translation - j0
    rots = pose.joint_rotations.copy()
    rots[0] = new_r0
    return BodyPose(new_t, rots)


def part_vertices(rig: BodyRig, part: str) -> np.ndarray:
    try:
        pid = rig.part_names.index(part)
    except ValueError:
        raise ValueError(f"unknown body part {part!r}; valid parts: {', '.join(rig.part_names)}") from None
    return np.flatnonzero(rig.part_labels == pid)


def body_sdf(rig: BodyRig, pose: BodyPose, cell: float = 0.02, padding: float = 0.05, bounds=None) -> SdfGrid:
    return build_sdf(posed_mesh(rig, pose), cell, padding, bounds=bounds)


# --- file formats -----------------------------------------------------------


def save_rig(rig: BodyRig, path, template_name: str | None = None) -> None:
    path = Path(path)
    template_name = template_name or path.stem + "_template.obj"
    save_obj(rig.template, path.parent / template_name)
    rows, cols = np.nonzero(rig.weights)
    doc = {
        "template_obj": template_name,
        "joints": rig.joints.tolist(),
        "parents": rig.parents.tolist(),
        "weights": [[int(r), int(c), float(rig.weights[r, c])] for r, c in zip(rows, cols)],
        "part_labels": rig.part_labels.tolist(),
        "part_names": list(rig.part_names),
    }
    path.write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_rig(path) -> BodyRig:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    template = load_obj(path.parent / doc["template_obj"])
    joints = np.asarray(doc["joints"], dtype=np.float64)
    weights = np.zeros((template.n_vertices, len(joints)))
    for r, c, w in doc["weights"]:
        weights[int(r), int(c)] = w
    return BodyRig(template, joints, doc["parents"], weights, doc["part_labels"], doc["part_names"])


def pose_to_record(t: int, pose: BodyPose) -> dict:
    return {"t": t, "root_t": pose.root_translation.tolist(), "joint_r": pose.joint_rotations.tolist()}


def pose_from_record(rec: dict) -> BodyPose:
    return BodyPose(rec["root_t"], rec["joint_r"])


def save_pose_sequence(seq: PoseSequence, path) -> None:
    lines = [json.dumps(pose_to_record(i, f)) for i, f in enumerate(seq.frames)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_pose_sequence(path, frame_rate: float = 30.0) -> PoseSequence:
    recs = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    recs.sort(key=lambda r: r["t"])
    return PoseSequence(tuple(pose_from_record(r) for r in recs), frame_rate)
