"""Dense signed-distance grids (negative inside) with trilinear lookup."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import GeometryError, SignUndefinedError
from .mesh import RAY_JITTER, TriMesh, _ray_hits, point_triangle_distance, signed_distance

_MAGIC = b"SDFG"
_VERSION = 1
_HEADER = struct.Struct("<4sI3dd3I")

# Grids at or below this many voxel-triangle pairs are filled by exhaustive scan.
BRUTE_FORCE_PAIRS = 4_000_000


@dataclass(frozen=True, eq=False)
class SdfGrid:
    origin: np.ndarray
    cell: float
    dims: tuple[int, int, int]
    values: np.ndarray  # (nx, ny, nz) float32

    def __post_init__(self):
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        dims = tuple(int(d) for d in self.dims)
        values = np.array(self.values, dtype=np.float32).reshape(dims)
        if self.cell <= 0 or min(dims) < 2:
            raise GeometryError("sdf grid needs cell > 0 and at least 2 samples per axis")
        origin.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "cell", float(self.cell))
        object.__setattr__(self, "values", values)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.cell * (np.array(self.dims) - 1)

    def node_positions(self) -> np.ndarray:
        axes = [self.origin[a] + self.cell * np.arange(self.dims[a]) for a in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(_MAGIC, _VERSION, *self.origin.tolist(), self.cell, *self.dims)
        payload = np.asarray(self.values, dtype="<f4").ravel(order="F").tobytes()
        return header + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SdfGrid":
        magic, version, ox, oy, oz, cell, nx, ny, nz = _HEADER.unpack_from(blob, 0)
        if magic != _MAGIC or version != _VERSION:
            raise GeometryError("not an sdf grid blob")
        n = nx * ny * nz
        values = np.frombuffer(blob, dtype="<f4", count=n, offset=_HEADER.size)
        return cls((ox, oy, oz), cell, (nx, ny, nz), values.reshape((nx, ny, nz), order="F"))


def _grid_frame(lo, hi, cell, padding):
    lo = np.asarray(lo, dtype=np.float64) - padding
    hi = np.asarray(hi, dtype=np.float64) + padding
    dims = np.maximum(np.ceil((hi - lo) / cell - 1e-9).astype(int) + 1, 2)
    return lo, tuple(int(d) for d in dims)


def build_sdf(mesh: TriMesh, cell_size: float, padding: float = 0.05, bounds=None, method: str = "auto") -> SdfGrid:
    """Sample the signed distance of a watertight mesh on a regular grid.

    The grid covers the mesh AABB (or ``bounds``, an (lo, hi) pair) expanded by
    ``padding``. ``method`` is "auto", "band" or "brute".
    """
    if cell_size <= 0:
        raise GeometryError("cell_size must be positive")
    if not mesh.watertight:
        raise SignUndefinedError("sign undefined: mesh is not watertight")
    lo, hi = mesh.aabb() if bounds is None else (np.asarray(bounds[0], float), np.asarray(bounds[1], float))
    if np.any(hi - lo <= 0) and padding <= 0:
        raise GeometryError("degenerate AABB")
    if np.any(mesh.aabb()[1] - mesh.aabb()[0] <= 0):
        raise GeometryError("degenerate AABB: mesh is flat")
    origin, dims = _grid_frame(lo, hi, cell_size, padding)
    n_vox = dims[0] * dims[1] * dims[2]
    if method == "auto":
        method = "brute" if n_vox * len(mesh.faces) <= BRUTE_FORCE_PAIRS else "band"
    if method == "brute":
        grid = SdfGrid(origin, cell_size, dims, np.zeros(dims, np.float32))
        values = signed_distance(mesh, grid.node_positions().reshape(-1, 3)).reshape(dims)
    elif method == "band":
        dist = _band_distance(mesh, origin, cell_size, dims)
        inside = _scanline_winding(mesh, origin, cell_size, dims) > 0
        values = np.where(inside, -dist, dist)
    else:
        raise ValueError(f"unknown sdf method {method!r}")
    return SdfGrid(origin, cell_size, dims, values.astype(np.float32))


def _index_ranges(lo, hi, origin, cell, dims):
    """Per-item inclusive voxel index ranges covering [lo, hi] (arrays (n, 3))."""
    a = np.ceil((lo - origin) / cell - 1e-9).astype(np.int64)
    b = np.floor((hi - origin) / cell + 1e-9).astype(np.int64)
    a = np.clip(a, 0, np.array(dims) - 1)
    b = np.clip(b, -1, np.array(dims) - 1)
    return a, b


def _expand_ranges(a, b):
    """Enumerate every integer triple in each box [a_i, b_i]; returns (owner, ijk)."""
    ext = np.maximum(b - a + 1, 0)
    sizes = ext.prod(axis=1)
    total = int(sizes.sum())
    owner = np.repeat(np.arange(len(a)), sizes)
    start = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    local = np.arange(total) - np.repeat(start, sizes)
    ex = ext[owner]
    k = local % ex[:, 2]
    j = (local // ex[:, 2]) % ex[:, 1]
    i = local // (ex[:, 2] * ex[:, 1])
    ijk = np.stack([i, j, k], axis=1) + a[owner]
    return owner, ijk


def _band_distance(mesh: TriMesh, origin, cell, dims, chunk=3_000_000):
    tri = mesh.triangles
    band = 2.0 * cell
    t_lo = tri.min(axis=1) - band
    t_hi = tri.max(axis=1) + band
    a, b = _index_ranges(t_lo, t_hi, origin, cell, dims)
    best = np.full(dims, np.inf)
    best_tri = np.full(dims, -1, dtype=np.int64)
    # Process triangles in groups to bound memory.
    sizes = np.maximum(b - a + 1, 0).prod(axis=1)
    groups = np.split(np.arange(len(tri)), np.flatnonzero(np.diff(np.cumsum(sizes) // chunk)) + 1)
    for g in groups:
        if len(g) == 0:
            continue
        owner, ijk = _expand_ranges(a[g], b[g])
        if len(owner) == 0:
            continue
        t_id = g[owner]
        p = origin + ijk * cell
        d = point_triangle_distance(p, tri[t_id, 0], tri[t_id, 1], tri[t_id, 2])
        flat = np.ravel_multi_index(ijk.T, dims)
        order = np.lexsort((d, flat))
        flat, d, t_id = flat[order], d[order], t_id[order]
        first = np.concatenate([[True], flat[1:] != flat[:-1]])
        flat, d, t_id = flat[first], d[first], t_id[first]
        cur = best.ravel()[flat]
        better = d < cur
        best.ravel()[flat[better]] = d[better]
        best_tri.ravel()[flat[better]] = t_id[better]
    in_band = best <= band
    if not np.any(in_band):
        nodes = (origin + np.stack(np.meshgrid(*[np.arange(n) for n in dims], indexing="ij"), -1) * cell)
        from .mesh import unsigned_distance

        d, _ = unsigned_distance(mesh, nodes.reshape(-1, 3))
        return d.reshape(dims)
    # Far voxels: exact distance to the triangle closest to the nearest band voxel.
    idx = ndimage.distance_transform_edt(~in_band, return_distances=False, return_indices=True)
    far = np.flatnonzero(~in_band.ravel())
    out = np.where(in_band, best, 0.0)
    flat_out = out.ravel()
    src = tuple(idx[ax].ravel()[far] for ax in range(3))
    src_tri = best_tri[src]
    far_ijk = np.stack(np.unravel_index(far, dims), axis=1)
    for s in range(0, len(far), chunk):
        sl = slice(s, s + chunk)
        p = origin + far_ijk[sl] * cell
        t = src_tri[sl]
        flat_out[far[sl]] = point_triangle_distance(p, tri[t, 0], tri[t, 1], tri[t, 2])
    return flat_out.reshape(dims)


def _scanline_winding(mesh: TriMesh, origin, cell, dims):
    """Signed crossing counts of +x rays through every (y, z) grid column."""
    tri = mesh.triangles
    nx, ny, nz = dims
    normal_x = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])[:, 0]
    keep = normal_x != 0
    tri_k = tri[keep]
    sign = np.sign(normal_x[keep]).astype(np.int64)
    o2 = origin[1:] + RAY_JITTER
    lo = tri_k[:, :, 1:].min(axis=1)
    hi = tri_k[:, :, 1:].max(axis=1)
    a = np.clip(np.ceil((lo - o2) / cell).astype(np.int64), 0, np.array([ny, nz]) - 1)
    b = np.clip(np.floor((hi - o2) / cell).astype(np.int64), -1, np.array([ny, nz]) - 1)
    a3 = np.concatenate([np.zeros((len(a), 1), np.int64), a], axis=1)
    b3 = np.concatenate([np.zeros((len(b), 1), np.int64), b], axis=1)
    owner, ijk = _expand_ranges(a3, b3)
    diff = np.zeros((nx + 1, ny, nz), dtype=np.int64)
    if len(owner):
        jj, kk = ijk[:, 1], ijk[:, 2]
        y = o2[0] + jj * cell
        z = o2[1] + kk * cell
        t = tri_k[owner]
        hit, xc = _ray_hits_paired(t, y, z)
        # voxels i with x_i < x_c see this crossing ahead of them
        count = np.clip(np.ceil((xc[hit] - origin[0]) / cell).astype(np.int64), 0, nx)
        np.add.at(diff, (count, jj[hit], kk[hit]), sign[owner[hit]])
    # winding[i] = sum_{c > i} diff[c]
    suffix = np.cumsum(diff[::-1], axis=0)[::-1]
    return suffix[1:]


def _ray_hits_paired(t, y, z):
    ay, az = t[:, 0, 1], t[:, 0, 2]
    by, bz = t[:, 1, 1], t[:, 1, 2]
    cy, cz = t[:, 2, 1], t[:, 2, 2]
    e0 = (by - ay) * (z - az) - (bz - az) * (y - ay)
    e1 = (cy - by) * (z - bz) - (cz - bz) * (y - by)
    e2 = (ay - cy) * (z - cz) - (az - cz) * (y - cy)
    hit = ((e0 > 0) & (e1 > 0) & (e2 > 0)) | ((e0 < 0) & (e1 < 0) & (e2 < 0))
    n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    xc = t[:, 0, 0] - (n[:, 1] * (y - ay) + n[:, 2] * (z - az)) / n[:, 0]
    return hit, xc


def _trilinear(grid: SdfGrid, points):
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    upper = grid.upper
    clamped = np.clip(p, grid.origin, upper)
    excess_vec = p - clamped
    u = (clamped - grid.origin) / grid.cell
    dims = np.array(grid.dims)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, dims - 2)
    f = u - i0
    v = grid.values
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    c = np.empty((len(p), 2, 2, 2))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                c[:, dx, dy, dz] = v[x0 + dx, y0 + dy, z0 + dz]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    return c, fx, fy, fz, excess_vec


def query_sdf(grid: SdfGrid, points) -> np.ndarray | float:
    """Trilinear signed distance; points outside the grid get the clamped value plus the excess."""
    scalar = np.asarray(points).ndim == 1
    c, fx, fy, fz, ex = _trilinear(grid, points)
    c00 = c[:, 0, 0, 0] * (1 - fx) + c[:, 1, 0, 0] * fx
    c01 = c[:, 0, 0, 1] * (1 - fx) + c[:, 1, 0, 1] * fx
    c10 = c[:, 0, 1, 0] * (1 - fx) + c[:, 1, 1, 0] * fx
    c11 = c[:, 0, 1, 1] * (1 - fx) + c[:, 1, 1, 1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    val = c0 * (1 - fz) + c1 * fz + np.linalg.norm(ex, axis=1)
    return float(val[0]) if scalar else val


def query_sdf_grad(grid: SdfGrid, points) -> tuple[np.ndarray, np.ndarray]:
    """Values and spatial gradients of :func:`query_sdf` (n,) and (n, 3)."""
    c, fx, fy, fz, ex = _trilinear(grid, points)
    val = query_sdf(grid, points if np.asarray(points).ndim == 2 else np.atleast_2d(points))
    wx = np.stack([1 - fx, fx], 1)
    wy = np.stack([1 - fy, fy], 1)
    wz = np.stack([1 - fz, fz], 1)
    dw = np.array([-1.0, 1.0])
    gx = np.einsum("nabc,a,nb,nc->n", c, dw, wy, wz)
    gy = np.einsum("nabc,na,b,nc->n", c, wx, dw, wz)
    gz = np.einsum("nabc,na,nb,c->n", c, wx, wy, dw)
    grad = np.stack([gx, gy, gz], axis=1) / grid.cell
    outside = np.any(ex != 0, axis=1)
    norm = np.linalg.norm(ex, axis=1, keepdims=True)
    # Along a clamped axis the interpolant is constant; the excess term carries the slope.
    clamped_axis = ex != 0
    grad = np.where(clamped_axis, 0.0, grad)
    grad = grad + np.where(outside[:, None], ex / np.where(norm > 0, norm, 1.0), 0.0)
    return np.atleast_1d(val), grad


SURFACE_EPS = 1e-6


def penetration_depth(sdf_values) -> np.ndarray:
    """Depth beyond the surface tolerance, max(-sdf - SURFACE_EPS, 0).

    Shifting the hinge (rather than zeroing small depths) keeps energies built on it continuous.
    """
    return np.maximum(-np.asarray(sdf_values, dtype=np.float64) - SURFACE_EPS, 0.0)
