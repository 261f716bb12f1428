"""Synthetic welded-carry segments for training and checking the dynamics models."""
from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..body import BodyRig, PoseSequence, load_rig, pose_from_record, pose_to_record, skin
from ..fixtures import carry_sequence, default_rig, grasp_box, gripped_object_pose
from ..geometry import RigidTransform, SdfGrid, TriMesh, build_sdf, load_obj, save_obj
from .controls import control_features, pose_window, sample_control_vertices
from .net import DynamicsSample
from .state import DynamicsConfig, ObjectStateSeq, transform_from_record, transform_to_record

OBJECT_SDF_CELL = 0.01
BOX_HEIGHTS = (0.12, 0.16, 0.20, 0.24)
BOX_FRONTS = (0.72, 0.78, 0.84)


def box_variants():
    """(mesh, rest grip center) for each synthetic box size."""
    return [grasp_box(height=h, z_front=z) for h in BOX_HEIGHTS for z in BOX_FRONTS]


@lru_cache(maxsize=32)
def object_grid(mesh: TriMesh) -> SdfGrid:
    return build_sdf(mesh, OBJECT_SDF_CELL, padding=0.05)


def carry_segment(rig: BodyRig, rng: np.random.Generator, n_frames: int, boxes, free_fraction: float = 0.1):
    """One random segment: (human, object poses, box index). Some segments leave the box on the floor."""
    human = carry_sequence(rig, n_frames, rng)
    k = int(rng.integers(len(boxes)))
    mesh, center = boxes[k]
    if rng.random() < free_fraction:
        spot = human[0].root_translation + np.array([1.5, -0.8, 1.5]) * rng.choice([-1.0, 1.0], 3)
        pose = RigidTransform.from_rotvec([0.0, rng.uniform(-np.pi, np.pi), 0.0], spot)
        obj = ObjectStateSeq.constant(pose, n_frames, human.frame_rate)
    else:
        obj = ObjectStateSeq(tuple(gripped_object_pose(rig, f, center) for f in human.frames), human.frame_rate)
    return human, obj, k


def build_sample(rig: BodyRig, mesh: TriMesh, grid: SdfGrid, human: PoseSequence, obj: ObjectStateSeq,
                 history: int, future: int, cfg: DynamicsConfig = DynamicsConfig()) -> DynamicsSample:
    """Controls from the history frames; forecast features see the object held at its last history pose."""
    verts = np.stack([skin(rig, f) for f in human.frames[: history + future]])
    prev = obj[:history]
    ids = sample_control_vertices(verts[:history], grid, prev.frames, cfg.delta1, cfg.delta2)
    feat_poses = pose_window(prev.frames, history, future)
    controls = control_features(rig, ids, verts[:, ids], mesh, feat_poses)
    return DynamicsSample(prev, controls, obj[history:history + future])


def synthetic_samples(n: int, history: int, future: int, seed: int = 0, rig: BodyRig | None = None,
                      cfg: DynamicsConfig = DynamicsConfig()) -> list[DynamicsSample]:
    rig = rig or default_rig()
    rng = np.random.default_rng(seed)
    boxes = box_variants()
    out = []
    for _ in range(n):
        human, obj, k = carry_segment(rig, rng, history + future, boxes)
        out.append(build_sample(rig, boxes[k][0], object_grid(boxes[k][0]), human, obj, history, future, cfg))
    return out


# --- corpus files -----------------------------------------------------------


def write_corpus(directory, n: int, n_frames: int, seed: int = 0, rig_path: str = "rig.json") -> Path:
    """JSON-lines corpus of raw segments whose object meshes and rig live next to it."""
    from ..body import save_rig

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rig = default_rig()
    save_rig(rig, directory / rig_path)
    boxes = box_variants()
    names = []
    for k, (mesh, _) in enumerate(boxes):
        names.append(f"box_{k:02d}.obj")
        save_obj(mesh, directory / names[-1])
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n):
        human, obj, k = carry_segment(rig, rng, n_frames, boxes)
        rec = {
            "id": i, "rig": rig_path, "object": names[k], "frame_rate": human.frame_rate,
            "human": [pose_to_record(t, f) for t, f in enumerate(human.frames)],
            "object_poses": [transform_to_record(p) for p in obj.frames],
        }
        lines.append(json.dumps(rec))
    path = directory / "corpus.jsonl"
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def load_corpus(path, history: int, future: int, cfg: DynamicsConfig = DynamicsConfig()) -> list[DynamicsSample]:
    path = Path(path)
    rigs: dict[str, BodyRig] = {}
    meshes: dict[str, TriMesh] = {}
    grids: dict[str, SdfGrid] = {}
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if len(rec["human"]) < history + future:
            raise ValueError(f"corpus record {rec.get('id')} is shorter than {history + future} frames")
        rig = rigs.get(rec["rig"]) or rigs.setdefault(rec["rig"], load_rig(path.parent / rec["rig"]))
        if rec["object"] not in meshes:
            meshes[rec["object"]] = load_obj(path.parent / rec["object"])
            grids[rec["object"]] = build_sdf(meshes[rec["object"]], OBJECT_SDF_CELL, padding=0.05)
        rate = rec.get("frame_rate", 30.0)
        human = PoseSequence(tuple(pose_from_record(r) for r in rec["human"]), rate)
        obj = ObjectStateSeq(tuple(transform_from_record(r) for r in rec["object_poses"]), rate)
        out.append(build_sample(rig, meshes[rec["object"]], grids[rec["object"]], human, obj, history, future, cfg))
    if not out:
        raise ValueError(f"{path}: corpus is empty")
    return out
