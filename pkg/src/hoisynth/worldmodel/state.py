from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import RigidTransform


@dataclass(frozen=True, eq=False)
class ObjectStateSeq:
    frames: tuple[RigidTransform, ...]
    frame_rate: float = 30.0

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("object state sequence must be non-empty")
        if self.frame_rate <= 0:
            raise ValueError("frame rate must be positive")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return ObjectStateSeq(self.frames[item], self.frame_rate)
        return self.frames[item]

    def __add__(self, other: "ObjectStateSeq") -> "ObjectStateSeq":
        if other.frame_rate != self.frame_rate:
            raise ValueError("frame rates differ")
        return ObjectStateSeq(self.frames + other.frames, self.frame_rate)

    def __eq__(self, other):
        return (
            isinstance(other, ObjectStateSeq)
            and self.frame_rate == other.frame_rate
            and len(self) == len(other)
            and all(np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)
                    for a, b in zip(self.frames, other.frames))
        )

    @property
    def rotations(self) -> np.ndarray:
        return np.stack([f.rotation for f in self.frames])

    @property
    def translations(self) -> np.ndarray:
        return np.stack([f.translation for f in self.frames])

    def params(self) -> np.ndarray:
        """(L, 6) rows of [translation, rotation vector]."""
        return np.stack([np.concatenate([f.translation, f.rotvec()]) for f in self.frames])

    @classmethod
    def from_params(cls, params, frame_rate: float = 30.0) -> "ObjectStateSeq":
        return cls(tuple(RigidTransform.from_rotvec(p[3:], p[:3]) for p in np.asarray(params, dtype=np.float64)),
                   frame_rate)

    @classmethod
    def constant(cls, pose: RigidTransform, n: int, frame_rate: float = 30.0) -> "ObjectStateSeq":
        return cls((pose,) * n, frame_rate)


def transform_to_record(pose: RigidTransform) -> dict:
    return {"R": pose.rotation.reshape(-1).tolist(), "t": pose.translation.tolist()}


def transform_from_record(rec: dict) -> RigidTransform:
    return RigidTransform(np.asarray(rec["R"], dtype=np.float64).reshape(3, 3), rec["t"])


@dataclass(frozen=True)
class DynamicsConfig:
    m: int = 4
    history: int = 4
    future: int = 12
    initial_history: int = 1
    initial_future: int = 15
    delta1: float = 0.02
    delta2: float = 0.05

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("segment length m must be >= 1")
        if self.history < 1 or self.initial_history < 1:
            raise ValueError("history horizons must be >= 1")
        if self.future < self.history or self.initial_future < self.initial_history:
            raise ValueError("forecast horizon must be at least the history horizon")
        if self.future < self.m or self.initial_future < self.m:
            raise ValueError("forecast horizon must cover one segment")
        if self.delta1 <= 0 or self.delta2 <= 0:
            raise ValueError("control sampling radii must be positive")
