"""Tag-indexed motion clips played back segment by segment as the human action source."""
from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .body import PoseSequence, load_pose_sequence, save_pose_sequence
from .errors import HoiError
from .planning import Plan, _inflections

_STOPWORDS = frozenset("a an the person someone with and or of to on in at up down by from for his her their its".split())


class MotionError(HoiError):
    pass


class ActionProvider(Protocol):
    """Source of human motion segments for one rollout."""

    frame_rate: float
    max_length: int

    @property
    def exhausted(self) -> bool: ...

    def initial_action(self, plan: Plan, seed: int) -> PoseSequence: ...

    def next_action(self, state, history: Sequence[PoseSequence], plan: Plan, seed: int) -> tuple[PoseSequence, bool]: ...

    def lookahead(self, n: int) -> PoseSequence: ...


@dataclass(frozen=True)
class MotionClip:
    tags: frozenset[str]
    sequence: PoseSequence
    end_positions: tuple[int, ...]
    name: str = ""


def _norm_tags(tags) -> frozenset[str]:
    if isinstance(tags, str):
        tags = [tags]
    out = frozenset(t.strip().lower() for t in tags if t and t.strip())
    if not out:
        raise ValueError("a clip needs at least one tag")
    return out


class MotionClipLibrary:
    def __init__(self, frame_rate: float = 30.0, min_length: int = 4):
        self.frame_rate = float(frame_rate)
        self.min_length = int(min_length)
        self._clips: list[MotionClip] = []
        self._index: dict[str, list[int]] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._clips)

    @property
    def clips(self) -> tuple[MotionClip, ...]:
        return tuple(self._clips)

    def clip(self, clip_id: int) -> MotionClip:
        return self._clips[clip_id]

    def ingest_clip(self, sequence: PoseSequence, tags, end_positions=None, name: str = "") -> int:
        if len(sequence) < self.min_length:
            raise ValueError(f"clip has {len(sequence)} frames, need at least {self.min_length}")
        if sequence.frame_rate != self.frame_rate:
            raise MotionError(f"clip frame rate {sequence.frame_rate} differs from library rate {self.frame_rate}")
        ends = tuple(sorted({int(e) for e in end_positions})) if end_positions else (len(sequence),)
        if ends[0] < 1 or ends[-1] > len(sequence):
            raise ValueError(f"end positions must lie in [1, {len(sequence)}]")
        clip = MotionClip(_norm_tags(tags), sequence, ends, name)
        with self._lock:
            cid = len(self._clips)
            self._clips.append(clip)
            for t in clip.tags:
                self._index.setdefault(t, []).append(cid)
        return cid

    def query(self, tag: str) -> list[int]:
        return list(self._index.get(tag.strip().lower(), ()))

    def match(self, keywords) -> list[tuple[int, int]]:
        """(clip id, number of its tags hit by some keyword) for every clip with a hit."""
        keywords = {k.lower() for k in keywords}
        out = []
        for cid, clip in enumerate(self._clips):
            score = sum(1 for t in clip.tags if keywords & _inflections(t))
            if score:
                out.append((cid, score))
        return out


def plan_keywords(plan: Plan) -> set[str]:
    words = re.findall(r"[a-z0-9']+", plan.standardized_text.lower())
    return {plan.object_category.lower()} | {w for w in words if w not in _STOPWORDS}


# --- files ------------------------------------------------------------------------


def save_library(library: MotionClipLibrary, directory) -> Path:
    """One pose-sequence JSON-lines file per clip, each with a JSON sidecar of tags and ends."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for cid, clip in enumerate(library.clips):
        stem = clip.name or f"clip_{cid:04d}"
        save_pose_sequence(clip.sequence, directory / f"{stem}.jsonl")
        side = {"tags": sorted(clip.tags), "end_positions": list(clip.end_positions), "frame_rate": library.frame_rate,
                "order": cid}
        (directory / f"{stem}.json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def load_library(directory, min_length: int = 4) -> MotionClipLibrary:
    directory = Path(directory)
    entries = []
    for path in sorted(directory.glob("*.jsonl")):
        side_path = path.with_suffix(".json")
        if not side_path.exists():
            raise MotionError(f"{path}: missing sidecar {side_path.name}")
        side = json.loads(side_path.read_text(encoding="utf-8"))
        entries.append((side.get("order", len(entries)), path, side))
    if not entries:
        raise MotionError(f"{directory}: no motion clips")
    entries.sort(key=lambda e: (e[0], e[1].name))
    rate = float(entries[0][2].get("frame_rate", 30.0))
    lib = MotionClipLibrary(rate, min_length)
    for _, path, side in entries:
        seq = load_pose_sequence(path, float(side.get("frame_rate", rate)))
        lib.ingest_clip(seq, side["tags"], side.get("end_positions"), path.stem)
    return lib


# --- playback -----------------------------------------------------------------------


class ClipProvider:
    """Plays the best-matching clip in m-frame segments; object state is not consulted.

    Clip choice among equally good matches, and the stopping point when a clip records
    several, are drawn from a generator seeded by the ``seed`` given to :meth:`initial_action`.
    """

    def __init__(self, library: MotionClipLibrary, m: int = 4):
        if m < 1:
            raise ValueError("segment length must be positive")
        self.library = library
        self.m = m
        self.frame_rate = library.frame_rate
        self.max_length = max((c.end_positions[-1] for c in library.clips), default=0)
        self._clip: MotionClip | None = None
        self._end = 0
        self._cursor = 0
        self.clip_id: int | None = None

    @property
    def exhausted(self) -> bool:
        return self._clip is not None and self._cursor >= self._end

    @property
    def length(self) -> int:
        return self._end

    def select(self, plan: Plan, seed: int) -> int:
        if len(self.library) == 0:
            raise MotionError("no motion for plan: the clip library is empty")
        hits = self.library.match(plan_keywords(plan))
        if not hits:
            raise MotionError(f"no motion for plan {plan.standardized_text!r}")
        best = max(score for _, score in hits)
        tied = sorted(cid for cid, score in hits if score == best)
        rng = np.random.default_rng(seed)
        cid = tied[int(rng.integers(len(tied)))]
        clip = self.library.clip(cid)
        end = clip.end_positions[int(rng.integers(len(clip.end_positions)))]
        self._clip, self.clip_id, self._end, self._cursor = clip, cid, end, 0
        return cid

    def _take(self, n: int) -> PoseSequence:
        start = self._cursor
        stop = min(start + n, self._end)
        self._cursor = stop
        return self._clip.sequence[start:stop]

    def initial_action(self, plan: Plan, seed: int) -> PoseSequence:
        self.select(plan, seed)
        return self._take(self.m)

    def next_action(self, state, history, plan: Plan, seed: int = 0) -> tuple[PoseSequence, bool]:
        if self._clip is None:
            raise MotionError("initial_action must come first")
        if not history:
            raise ValueError("history of actions is empty")
        if self.exhausted:
            raise MotionError("clip already finished")
        seg = self._take(self.m)
        return seg, self.exhausted

    def lookahead(self, n: int) -> PoseSequence:
        """The next ``n`` frames after the cursor; the final frame is held past the end."""
        if self._clip is None:
            raise MotionError("initial_action must come first")
        seq = self._clip.sequence
        idx = [min(self._cursor + k, self._end - 1) for k in range(n)]
        return PoseSequence(tuple(seq.frames[i] for i in idx), seq.frame_rate)
