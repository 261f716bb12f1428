"""Writes the self-contained demo bundle: rig, contact database, clip library, ground truth, config."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .body import PoseSequence, save_rig, skin
from .export import InteractionSequence, export_sequence
from .fixtures import arms_forward_pose, carry_sequence, default_rig, grasp_box, gripped_object_pose, lift_clip
from .geometry import RigidTransform
from .motion import MotionClipLibrary, save_library
from .retrieval import InteractionDB, ingest_frame, save_db
from .worldmodel import ObjectStateSeq

DEMO_TEXT = "a person lifts a box with both hands"
LIFT_FRAMES = 16

CONFIG_TEMPLATE = """\
# Demo configuration written by `hoisynth init-fixture`.
text = "{text}"
seed = 0
rig = "rig.json"
db = "db"
output = "out"

[planner]
kind = "rules"

[provider]
kind = "clips"
clips = "clips"

[dynamics]
backend = "oracle"
m = 4
history = 4
future = 12
initial_history = 1
initial_future = 15

[refine]
iterations = 300
step = 0.01

[retrieval]
mode = "proportional"

[export]
meshes = false
gt = "gt"

[train]
samples = 2000
epochs = 500
output = "dynamics.net"

[eval]
workers = 2

[[eval.items]]
text = "{text}"
gt = "gt"

[[eval.items]]
text = "someone raises the box with both hands"
gt = "gt"
"""


def demo_library(rig, frame_rate: float = 30.0) -> MotionClipLibrary:
    lib = MotionClipLibrary(frame_rate)
    lib.ingest_clip(lift_clip(rig, LIFT_FRAMES, frame_rate=frame_rate), ["lift", "raise", "box"], name="lift_box")
    walk = carry_sequence(rig, 24, np.random.default_rng(7), frame_rate, speed_max=0.8, pitch_rate_max=0.0)
    lib.ingest_clip(walk, ["carry", "walk", "box"], end_positions=[12, 24], name="carry_box")
    return lib


def demo_db(rig) -> InteractionDB:
    """Two-hand box grip recorded at the rest pose."""
    db = InteractionDB(rig.part_names)
    mesh, center = grasp_box()
    db.add_template("box", mesh)
    rest = arms_forward_pose(rig)
    verts = skin(rig, rest)
    ingest_frame(db, verts, RigidTransform(np.eye(3), center), ["left_hand", "right_hand"], "box", source_id="rest_grip")
    return db


def demo_ground_truth(rig) -> InteractionSequence:
    """The lift clip with the box welded to the hands."""
    human = lift_clip(rig, LIFT_FRAMES)
    _, center = grasp_box()
    obj = ObjectStateSeq(tuple(gripped_object_pose(rig, f, center) for f in human.frames), human.frame_rate)
    return InteractionSequence(human, obj, "box")


def write_demo(directory) -> Path:
    """Populate ``directory`` and return the path of its config file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rig = default_rig()
    save_rig(rig, directory / "rig.json")
    save_db(demo_db(rig), directory / "db")
    save_library(demo_library(rig), directory / "clips")
    export_sequence(demo_ground_truth(rig), directory / "gt")
    cfg = directory / "config.toml"
    cfg.write_text(CONFIG_TEMPLATE.format(text=DEMO_TEXT), encoding="utf-8")
    return cfg


def single_segment_library(rig, m: int = 4) -> MotionClipLibrary:
    lib = MotionClipLibrary()
    lib.ingest_clip(PoseSequence(lift_clip(rig, LIFT_FRAMES).frames[:m]), ["lift", "box"], name="lift_short")
    return lib
