from __future__ import annotations

from ..errors import UnderdeterminedError
from ..geometry import kabsch_fit
from .controls import ControlSet
from .state import ObjectStateSeq


def oracle_step(prev: ObjectStateSeq, controls: ControlSet) -> ObjectStateSeq:
    """Rigid-attachment dynamics: the object follows the best-fit motion of its controls.

    The controls' trajectories hold H history frames followed by the forecast frames; the last
    history frame is aligned with ``prev[-1]``. Fewer than three (or collinear) controls hold
    the pose.
    """
    history = len(prev)
    n_future = controls.n_frames - history
    if n_future < 1:
        raise ValueError("controls carry no forecast frames")
    last = prev[-1]
    if controls.n < 3:
        return ObjectStateSeq.constant(last, n_future, prev.frame_rate)
    anchor = controls.trajectories[history - 1]
    frames = []
    for f in range(n_future):
        try:
            motion, _ = kabsch_fit(anchor, controls.trajectories[history + f])
        except UnderdeterminedError:
            frames.append(last)
            continue
        frames.append(motion @ last)
    return ObjectStateSeq(tuple(frames), prev.frame_rate)

