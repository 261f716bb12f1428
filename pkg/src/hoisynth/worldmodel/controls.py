"""Sparse control vertices near the object and their per-vertex features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..body import BodyRig
from ..geometry import RigidTransform, SdfGrid, TriMesh, query_sdf, unsigned_distance


def sample_control_vertices(body_frames, object_grid: SdfGrid, object_poses, delta1: float = 0.02,
                            delta2: float = 0.05) -> np.ndarray:
    """Greedy farthest-point subset of the vertices that stay within ``delta1`` of the object.

    ``body_frames`` is (H, V, 3) in world space, ``object_grid`` lives in the object's local
    frame and ``object_poses`` gives the H world poses. Distances between vertices are the
    minimum over the H frames, so every selected pair is at least ``delta2`` apart in every frame.
    """
    if delta1 <= 0 or delta2 <= 0:
        raise ValueError("delta1 and delta2 must be positive")
    frames = np.asarray(body_frames, dtype=np.float64)
    if frames.ndim == 2:
        frames = frames[None]
    if len(object_poses) != len(frames):
        raise ValueError("need one object pose per history frame")
    near = np.ones(frames.shape[1], dtype=bool)
    for verts, pose in zip(frames, object_poses):
        near &= np.abs(query_sdf(object_grid, pose.apply_inverse(verts))) <= delta1
    cand = np.flatnonzero(near)
    if cand.size == 0:
        return cand
    pts = frames[:, cand]  # (H, C, 3)

    def spread(i):
        # Plain sum of squares rather than a BLAS norm, so near-ties between mirrored
        # vertices round the same way as a scalar loop would.
        d = pts - pts[:, i:i + 1]
        return np.sqrt(np.sum(d * d, axis=2)).min(axis=0)

    chosen = [0]
    gap = spread(0)
    while True:
        best = int(np.argmax(gap))
        if gap[best] < delta2:
            break
        chosen.append(best)
        gap = np.minimum(gap, spread(best))
    return cand[np.array(chosen)]


@dataclass(frozen=True, eq=False)
class ControlSet:
    vertex_ids: np.ndarray  # (N,)
    trajectories: np.ndarray  # (T, N, 3) world positions, T = H + F
    tpose_xyz: np.ndarray  # (N, 3)
    surface_dist: np.ndarray  # (T, N)
    rel_velocity: np.ndarray  # (T, N, 3) per frame

    @property
    def n(self) -> int:
        return len(self.vertex_ids)

    @property
    def n_frames(self) -> int:
        return self.trajectories.shape[0]

    def permuted(self, order) -> "ControlSet":
        order = np.asarray(order)
        return ControlSet(self.vertex_ids[order], self.trajectories[:, order], self.tpose_xyz[order],
                          self.surface_dist[:, order], self.rel_velocity[:, order])


def control_features(rig: BodyRig, vertex_ids, trajectories, object_mesh: TriMesh, object_poses) -> ControlSet:
    """T-pose coordinates, surface distance and velocity relative to the nearest object vertex.

    Relative velocity at frame i uses the object vertex nearest at frame i in both frames i and
    i-1; frame 0 copies frame 1 (zero for single-frame inputs).
    """
    ids = np.asarray(vertex_ids, dtype=np.int64).reshape(-1)
    traj = np.asarray(trajectories, dtype=np.float64)
    n_t = len(object_poses)
    if traj.size != n_t * len(ids) * 3:
        raise ValueError("trajectories must be (frames, N, 3) with one object pose per frame")
    traj = traj.reshape(n_t, len(ids), 3)
    dist = np.zeros((n_t, len(ids)))
    vel = np.zeros((n_t, len(ids), 3))
    if len(ids):
        obj = [pose.apply(object_mesh.vertices) for pose in object_poses]
        nearest = []
        for i, pose in enumerate(object_poses):
            dist[i] = unsigned_distance(object_mesh, pose.apply_inverse(traj[i]))[0]
            nearest.append(cKDTree(obj[i]).query(traj[i])[1])
        for i in range(1, n_t):
            n_i = nearest[i]
            vel[i] = (traj[i] - obj[i][n_i]) - (traj[i - 1] - obj[i - 1][n_i])
        if n_t > 1:
            vel[0] = vel[1]
    return ControlSet(ids, traj, rig.template.vertices[ids].copy(), dist, vel)


def hold_last(frames, n_total: int):
    """Pad a frame list to ``n_total`` by repeating its last element."""
    frames = list(frames)
    if not frames:
        raise ValueError("nothing to pad")
    return frames[:n_total] + [frames[-1]] * max(0, n_total - len(frames))


def pose_window(poses, history: int, future: int) -> list[RigidTransform]:
    """History poses followed by the last history pose held over the forecast."""
    poses = list(poses)[-history:]
    return poses + [poses[-1]] * future
