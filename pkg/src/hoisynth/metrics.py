"""Evaluation metrics for generated human-object sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import BodyRig, PoseSequence, posed_mesh, skin
from .geometry import TriMesh, geodesic_angle, penetration_depths, unsigned_distance
from .worldmodel.state import ObjectStateSeq

CONTACT_THRESHOLD = 0.03


@dataclass(frozen=True)
class ContactProfile:
    """Fraction of frames in which each rig part is within the threshold of the object."""

    fractions: np.ndarray
    part_names: tuple[str, ...]

    def __post_init__(self):
        f = np.asarray(self.fractions, dtype=np.float64).reshape(-1)
        if len(f) != len(self.part_names):
            raise ValueError("one fraction per part is required")
        if np.any(f < 0) or np.any(f > 1):
            raise ValueError("contact fractions must lie in [0, 1]")
        object.__setattr__(self, "fractions", f)

    def __len__(self):
        return len(self.fractions)

    def as_dict(self) -> dict[str, float]:
        return {p: float(v) for p, v in zip(self.part_names, self.fractions)}


def _check_lengths(human: PoseSequence, obj: ObjectStateSeq):
    if len(human) != len(obj):
        raise ValueError(f"human has {len(human)} frames, object has {len(obj)}")


def contact_profile(rig: BodyRig, human: PoseSequence, obj: ObjectStateSeq, mesh: TriMesh,
                    threshold: float = CONTACT_THRESHOLD) -> ContactProfile:
    """Per part, the share of frames where any of its vertices lies within ``threshold`` of the
    posed object surface."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    _check_lengths(human, obj)
    hits = np.zeros(len(rig.part_names))
    n_parts = len(rig.part_names)
    for pose, opose in zip(human.frames, obj.frames):
        d, _ = unsigned_distance(mesh, opose.apply_inverse(skin(rig, pose)))
        near = np.zeros(n_parts, dtype=bool)
        near[np.unique(rig.part_labels[d <= threshold])] = True
        hits += near
    return ContactProfile(hits / len(human), tuple(rig.part_names))


def metric_cmd(gen: ContactProfile | np.ndarray, gt: ContactProfile | np.ndarray) -> float:
    """Mean absolute difference of two contact profiles."""
    a = gen.fractions if isinstance(gen, ContactProfile) else np.asarray(gen, dtype=np.float64)
    b = gt.fractions if isinstance(gt, ContactProfile) else np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"profiles cover {a.size} and {b.size} parts")
    if a.size == 0:
        raise ValueError("profiles are empty")
    return float(np.mean(np.abs(a - b)))


def penetration_fractions(rig: BodyRig, human: PoseSequence, obj: ObjectStateSeq, mesh: TriMesh) -> np.ndarray:
    """Per frame, the share of object vertices strictly inside the posed body."""
    _check_lengths(human, obj)
    out = np.empty(len(human))
    for i, (pose, opose) in enumerate(zip(human.frames, obj.frames)):
        depth = penetration_depths(posed_mesh(rig, pose), opose.apply(mesh.vertices))
        out[i] = np.count_nonzero(depth > 0) / len(depth)
    return out


def metric_pene(rig: BodyRig, human: PoseSequence, obj: ObjectStateSeq, mesh: TriMesh) -> float:
    return float(np.mean(penetration_fractions(rig, human, obj, mesh)))


def max_penetration_depth(rig: BodyRig, human: PoseSequence, obj: ObjectStateSeq, mesh: TriMesh) -> np.ndarray:
    """Per frame, how deep the deepest object vertex sits inside the body (0 when outside)."""
    _check_lengths(human, obj)
    out = np.empty(len(human))
    for i, (pose, opose) in enumerate(zip(human.frames, obj.frames)):
        out[i] = float(penetration_depths(posed_mesh(rig, pose), opose.apply(mesh.vertices)).max())
    return out


def metric_pose_err(pred: ObjectStateSeq, gt: ObjectStateSeq) -> tuple[float, float]:
    """Mean translation error in millimetres and mean geodesic rotation error in radians."""
    if len(pred) != len(gt):
        raise ValueError(f"sequences have {len(pred)} and {len(gt)} frames")
    trans = np.linalg.norm(pred.translations - gt.translations, axis=1)
    rot = geodesic_angle(pred.rotations, gt.rotations)
    return float(np.mean(trans) * 1000.0), float(np.mean(rot))
