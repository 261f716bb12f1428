from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ..errors import GeometryError
from .transforms import RigidTransform

DEGENERATE_AREA = 1e-14


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    watertight: bool = field(init=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(v) == 0:
            raise GeometryError("mesh has no vertices")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise GeometryError("face index out of range")
        if len(f):
            tri = v[f]
            area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
            bad = np.flatnonzero(area <= DEGENERATE_AREA)
            if len(bad):
                raise GeometryError(f"degenerate (zero-area) faces: {bad[:10].tolist()}")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "watertight", _is_watertight(f))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def kdtree(self) -> cKDTree:
        return cKDTree(self.vertices)

    @cached_property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, pose: RigidTransform) -> "TriMesh":
        return TriMesh(pose.apply(self.vertices), self.faces)

    def with_vertices(self, vertices) -> "TriMesh":
        return TriMesh(vertices, self.faces)

    def max_edge_length(self) -> float:
        tri = self.triangles
        edges = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2]], axis=1)
        return float(np.linalg.norm(edges, axis=2).max()) if len(tri) else 0.0


def _is_watertight(faces: np.ndarray) -> bool:
    """Closed, consistently oriented 2-manifold: every directed edge has exactly one twin."""
    if len(faces) == 0:
        return False
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    n = int(faces.max()) + 1
    fwd = e[:, 0] * n + e[:, 1]
    rev = e[:, 1] * n + e[:, 0]
    uniq, counts = np.unique(fwd, return_counts=True)
    if np.any(counts != 1):
        return False
    return bool(np.all(np.isin(rev, uniq, assume_unique=False)))


def load_obj(path) -> TriMesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def obj_text(vertices, faces) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(vertices, dtype=np.float64).tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces).tolist()]
    return "\n".join(lines) + "\n"


def save_obj(mesh: TriMesh, path) -> None:
    Path(path).write_text(obj_text(mesh.vertices, mesh.faces), encoding="utf-8")


def make_box(center=(0.0, 0.0, 0.0), size=(1.0, 1.0, 1.0), segments=(1, 1, 1)) -> TriMesh:
    """Axis-aligned box whose surface is a regular lattice of ``segments`` cells per axis."""
    center = np.asarray(center, dtype=np.float64)
    size = np.asarray(size, dtype=np.float64)
    na, nb, nc = (int(s) for s in segments)
    if min(na, nb, nc) < 1 or np.any(size <= 0):
        raise GeometryError("box needs positive size and at least one segment per axis")
    xs = np.linspace(-0.5, 0.5, na + 1) * size[0] + center[0]
    ys = np.linspace(-0.5, 0.5, nb + 1) * size[1] + center[1]
    zs = np.linspace(-0.5, 0.5, nc + 1) * size[2] + center[2]
    index = -np.ones((na + 1, nb + 1, nc + 1), dtype=np.int64)
    verts = []
    for i in range(na + 1):
        for j in range(nb + 1):
            for k in range(nc + 1):
                if i in (0, na) or j in (0, nb) or k in (0, nc):
                    index[i, j, k] = len(verts)
                    verts.append((xs[i], ys[j], zs[k]))
    faces = []

    def quad(a, b, c, d):
        faces.append((a, b, c))
        faces.append((a, c, d))

    for j in range(nb):
        for k in range(nc):
            quad(index[0, j, k], index[0, j, k + 1], index[0, j + 1, k + 1], index[0, j + 1, k])
            quad(index[na, j, k], index[na, j + 1, k], index[na, j + 1, k + 1], index[na, j, k + 1])
    for i in range(na):
        for k in range(nc):
            quad(index[i, 0, k], index[i + 1, 0, k], index[i + 1, 0, k + 1], index[i, 0, k + 1])
            quad(index[i, nb, k], index[i, nb, k + 1], index[i + 1, nb, k + 1], index[i + 1, nb, k])
    for i in range(na):
        for j in range(nb):
            quad(index[i, j, 0], index[i, j + 1, 0], index[i + 1, j + 1, 0], index[i + 1, j, 0])
            quad(index[i, j, nc], index[i + 1, j, nc], index[i + 1, j + 1, nc], index[i, j + 1, nc])
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64))


def make_icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5.0**0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriMesh(v, np.array(faces, dtype=np.int64))


def merge_meshes(meshes) -> TriMesh:
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def nearest_vertices(mesh: TriMesh, pose: RigidTransform | None, points) -> tuple[np.ndarray, np.ndarray]:
    """Nearest posed-mesh vertex for each query point, ties broken by lowest index."""
    q = np.atleast_2d(np.asarray(points, dtype=np.float64))
    local = pose.apply_inverse(q) if pose is not None else q
    dist, idx = mesh.kdtree.query(local, k=1)
    idx = np.asarray(idx, dtype=np.int64)
    dist = np.asarray(dist, dtype=np.float64)
    # cKDTree returns an arbitrary member of an exact tie; rescan those balls.
    radius = dist * (1.0 + 1e-12) + 1e-15
    k_check = min(8, mesh.n_vertices)
    if k_check > 1:
        dk, ik = mesh.kdtree.query(local, k=k_check)
        tied = dk <= radius[:, None]
        has_tie = tied.sum(axis=1) > 1
        if np.any(has_tie):
            cand = np.where(tied[has_tie], ik[has_tie], np.iinfo(np.int64).max)
            idx[has_tie] = cand.min(axis=1)
    return idx, dist


def nearest_on_mesh(mesh: TriMesh, pose: RigidTransform | None, point) -> tuple[int, float]:
    idx, dist = nearest_vertices(mesh, pose, np.asarray(point, dtype=np.float64).reshape(1, 3))
    return int(idx[0]), float(dist[0])


def point_triangle_distance(p, a, b, c) -> np.ndarray:
    """Euclidean distance from points to triangles, paired row-wise (all (n, 3))."""
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        closest = a + ab * v[:, None] + ac * w[:, None]

        m_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        closest = np.where(m_bc[:, None], b + t_bc[:, None] * (c - b), closest)

        m_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t_ac = d2 / (d2 - d6)
        closest = np.where(m_ac[:, None], a + t_ac[:, None] * ac, closest)

        m_c = (d6 >= 0) & (d5 <= d6)
        closest = np.where(m_c[:, None], c, closest)

        m_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t_ab = d1 / (d1 - d3)
        closest = np.where(m_ab[:, None], a + t_ab[:, None] * ab, closest)

        m_b = (d3 >= 0) & (d4 <= d3)
        closest = np.where(m_b[:, None], b, closest)

        m_a = (d1 <= 0) & (d2 <= 0)
        closest = np.where(m_a[:, None], a, closest)
    return np.linalg.norm(p - closest, axis=1)


def unsigned_distance(mesh: TriMesh, points, chunk: int = 2_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Exact distance to the nearest triangle by exhaustive scan; returns (distance, triangle id)."""
    q = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tri = mesh.triangles
    nt = len(tri)
    best = np.full(len(q), np.inf)
    best_t = np.zeros(len(q), dtype=np.int64)
    per = max(1, chunk // max(nt, 1))
    for s in range(0, len(q), per):
        block = q[s : s + per]
        pi = np.repeat(np.arange(len(block)), nt)
        ti = np.tile(np.arange(nt), len(block))
        d = point_triangle_distance(block[pi], tri[ti, 0], tri[ti, 1], tri[ti, 2]).reshape(len(block), nt)
        arg = d.argmin(axis=1)
        best[s : s + per] = d[np.arange(len(block)), arg]
        best_t[s : s + per] = arg
    return best, best_t


RAY_JITTER = np.array([1.2345e-7, 2.7183e-7])


def winding_along_x(mesh: TriMesh, points, chunk: int = 2_000_000) -> np.ndarray:
    """Signed crossing count of a +x ray from each point (>0 means inside a closed mesh).

    Exits through outward-facing triangles count +1, entries -1, so overlapping
    closed components still report inside.
    """
    q = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tri = mesh.triangles
    nt = len(tri)
    normal_x = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])[:, 0]
    out = np.zeros(len(q), dtype=np.int64)
    per = max(1, chunk // max(nt, 1))
    for s in range(0, len(q), per):
        block = q[s : s + per]
        y = block[:, 1:2] + RAY_JITTER[0]
        z = block[:, 2:3] + RAY_JITTER[1]
        hit, xc = _ray_hits(tri, y, z)
        ahead = hit & (xc > block[:, 0:1])
        sign = np.sign(normal_x)[None, :].astype(np.int64)
        out[s : s + per] = np.sum(np.where(ahead, sign, 0), axis=1)
    return out


def _ray_hits(tri, y, z):
    """Hit mask and x-intercepts of lines parallel to x at (y, z) against triangles.

    ``y``/``z`` broadcast against the triangle axis.
    """
    ay, az = tri[:, 0, 1], tri[:, 0, 2]
    by, bz = tri[:, 1, 1], tri[:, 1, 2]
    cy, cz = tri[:, 2, 1], tri[:, 2, 2]
    e0 = (by - ay) * (z - az) - (bz - az) * (y - ay)
    e1 = (cy - by) * (z - bz) - (cz - bz) * (y - by)
    e2 = (ay - cy) * (z - cz) - (az - cz) * (y - cy)
    hit = ((e0 > 0) & (e1 > 0) & (e2 > 0)) | ((e0 < 0) & (e1 < 0) & (e2 < 0))
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = tri[:, 0, 0] - (n[:, 1] * (y - ay) + n[:, 2] * (z - az)) / n[:, 0]
    hit = hit & (n[:, 0] != 0)
    return hit, xc


def signed_distance(mesh: TriMesh, points) -> np.ndarray:
    """Exact signed distance (negative inside) by exhaustive scan; mesh must be watertight."""
    from ..errors import SignUndefinedError

    if not mesh.watertight:
        raise SignUndefinedError("sign undefined: mesh is not watertight")
    d, _ = unsigned_distance(mesh, points)
    inside = winding_along_x(mesh, points) > 0
    return np.where(inside, -d, d)


def penetration_depths(mesh: TriMesh, points) -> np.ndarray:
    """``max(0, -signed_distance)`` without scanning points that cannot be inside.

    Points outside the mesh bounding box are skipped, and the distance scan only runs on
    points the winding test puts inside.
    """
    from ..errors import SignUndefinedError

    if not mesh.watertight:
        raise SignUndefinedError("sign undefined: mesh is not watertight")
    q = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.zeros(len(q))
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    cand = np.flatnonzero(np.all((q >= lo) & (q <= hi), axis=1))
    if cand.size:
        cand = cand[winding_along_x(mesh, q[cand]) > 0]
    if cand.size:
        out[cand] = unsigned_distance(mesh, q[cand])[0]
    return out
