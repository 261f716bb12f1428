"""Generated sequences on disk: JSON-lines poses, per-frame OBJ meshes and a metrics report."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .body import BodyPose, BodyRig, PoseSequence, pose_from_record, posed_mesh
from .errors import HoiError
from .geometry import TriMesh
from .geometry.mesh import obj_text
from .metrics import (
    CONTACT_THRESHOLD,
    contact_profile,
    max_penetration_depth,
    metric_cmd,
    metric_pose_err,
    penetration_fractions,
)
from .worldmodel import ObjectStateSeq, transform_from_record, transform_to_record

SEQUENCE_FILE = "sequence.jsonl"
META_FILE = "meta.json"
METRICS_FILE = "metrics.json"
FRAMES_DIR = "frames"


class ExportError(HoiError):
    pass


@dataclass(frozen=True, eq=False)
class InteractionSequence:
    human: PoseSequence
    object: ObjectStateSeq
    category: str
    provenance: tuple[dict, ...] = field(default=())

    def __post_init__(self):
        if len(self.human) != len(self.object):
            raise ValueError(f"human has {len(self.human)} frames, object has {len(self.object)}")
        if self.human.frame_rate != self.object.frame_rate:
            raise ValueError("human and object frame rates differ")
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def __len__(self):
        return len(self.human)

    @property
    def frame_rate(self) -> float:
        return self.human.frame_rate

    def __eq__(self, other):
        return (isinstance(other, InteractionSequence) and self.category == other.category
                and self.human == other.human and self.object == other.object
                and list(self.provenance) == list(other.provenance))


def _dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def frame_record(t: int, pose: BodyPose, obj) -> dict:
    return {"t": t, "human": {"root_t": pose.root_translation.tolist(), "joint_r": pose.joint_rotations.tolist()},
            "object": transform_to_record(obj)}


def sequence_lines(seq: InteractionSequence) -> str:
    return "".join(json.dumps(frame_record(i, h, o), sort_keys=True) + "\n"
                   for i, (h, o) in enumerate(zip(seq.human.frames, seq.object.frames)))


def frame_mesh(rig: BodyRig, pose: BodyPose, obj_pose, mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Posed body followed by the posed object, as one vertex and face array."""
    body = posed_mesh(rig, pose)
    verts = np.concatenate([body.vertices, obj_pose.apply(mesh.vertices)])
    faces = np.concatenate([body.faces, mesh.faces + body.n_vertices])
    return verts, faces


def _nullable(x) -> float | None:
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


def metrics_report(seq: InteractionSequence, rig: BodyRig, mesh: TriMesh, gt: InteractionSequence | None = None,
                   threshold: float = CONTACT_THRESHOLD) -> dict:
    """Penetration always; contact distance and pose errors only against a ground truth."""
    pene = penetration_fractions(rig, seq.human, seq.object, mesh)
    depth = max_penetration_depth(rig, seq.human, seq.object, mesh)
    report = {"pene": float(np.mean(pene)), "max_penetration_depth": float(depth.max()), "cmd": None,
              "trans_err_mm": None, "rot_err_rad": None, "rot_err_kind": "geodesic",
              "contact_threshold": threshold, "frames": len(seq)}
    if gt is not None:
        if len(gt) != len(seq):
            raise ExportError(f"ground truth has {len(gt)} frames, sequence has {len(seq)}")
        gen_p = contact_profile(rig, seq.human, seq.object, mesh, threshold)
        gt_p = contact_profile(rig, gt.human, gt.object, mesh, threshold)
        trans, rot = metric_pose_err(seq.object, gt.object)
        report.update(cmd=metric_cmd(gen_p, gt_p), trans_err_mm=trans, rot_err_rad=rot)
    segments = []
    for k, prov in enumerate(seq.provenance):
        start, stop = int(prov.get("start", 0)), int(prov.get("stop", len(seq)))
        entry = {"segment": k, "start": start, "stop": stop, "pene": float(np.mean(pene[start:stop])),
                 "max_penetration_depth": float(depth[start:stop].max()),
                 "dynamics": prov.get("dynamics"), "gated": prov.get("gated"), "refined": prov.get("refined")}
        if gt is not None:
            t, r = metric_pose_err(seq.object[start:stop], gt.object[start:stop])
            entry.update(trans_err_mm=t, rot_err_rad=r)
        segments.append(entry)
    report["per_segment"] = segments
    return {k: (_nullable(v) if isinstance(v, float) else v) for k, v in report.items()}


def export_sequence(seq: InteractionSequence, directory, rig: BodyRig | None = None, mesh: TriMesh | None = None,
                    meshes: bool = False, gt: InteractionSequence | None = None, extra_meta: dict | None = None) -> Path:
    """Write the sequence, its metadata and, given a rig and mesh, the metrics report and OBJ frames."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / SEQUENCE_FILE).write_text(sequence_lines(seq), encoding="utf-8")
        meta = {"category": seq.category, "frame_rate": seq.frame_rate, "frames": len(seq),
                "provenance": list(seq.provenance)}
        if extra_meta:
            meta.update(extra_meta)
        (directory / META_FILE).write_text(_dumps(meta), encoding="utf-8")
        if rig is not None and mesh is not None:
            (directory / METRICS_FILE).write_text(_dumps(metrics_report(seq, rig, mesh, gt)), encoding="utf-8")
            if meshes:
                frames = directory / FRAMES_DIR
                frames.mkdir(exist_ok=True)
                for i, (h, o) in enumerate(zip(seq.human.frames, seq.object.frames)):
                    verts, faces = frame_mesh(rig, h, o, mesh)
                    (frames / f"frame_{i:05d}.obj").write_text(obj_text(verts, faces), encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"cannot write {exc.filename or directory}: {exc.strerror or exc}") from None
    return directory


def read_sequence_lines(path, frame_rate: float = 30.0) -> tuple[PoseSequence, ObjectStateSeq]:
    path = Path(path)
    try:
        recs = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    except OSError as exc:
        raise ExportError(f"cannot read {path}: {exc.strerror or exc}") from None
    if not recs:
        raise ExportError(f"{path}: no frames")
    recs.sort(key=lambda r: r["t"])
    try:
        human = PoseSequence(tuple(pose_from_record(r["human"]) for r in recs), frame_rate)
        obj = ObjectStateSeq(tuple(transform_from_record(r["object"]) for r in recs), frame_rate)
    except (KeyError, TypeError, ValueError) as exc:
        raise ExportError(f"{path}: malformed frame record ({exc})") from None
    return human, obj


def load_sequence(path) -> InteractionSequence:
    """Read an exported directory (or a bare sequence file with default metadata)."""
    path = Path(path)
    directory = path if path.is_dir() else path.parent
    seq_path = path / SEQUENCE_FILE if path.is_dir() else path
    meta_path = directory / META_FILE
    meta = {}
    if meta_path.exists() and seq_path.name == SEQUENCE_FILE:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    human, obj = read_sequence_lines(seq_path, float(meta.get("frame_rate", 30.0)))
    return InteractionSequence(human, obj, meta.get("category", ""), tuple(meta.get("provenance", ())))
