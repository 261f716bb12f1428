import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from hoisynth.errors import UnderdeterminedError
from hoisynth.geometry import (
    SURFACE_EPS,
    RigidTransform,
    SdfGrid,
    build_sdf,
    canonical_rotvec,
    geodesic_angle,
    kabsch_fit,
    load_obj,
    make_box,
    make_icosphere,
    merge_meshes,
    orthonormalize,
    penetration_depth,
    penetration_depths,
    query_sdf,
    query_sdf_grad,
    rotation_6d,
    rotation_from_6d,
    rotvec_to_matrix,
    save_obj,
    signed_distance,
    unsigned_distance,
)

from conftest import random_transform


def test_kabsch_recovers_known_transform():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(10, 3))
    truth = random_transform(rng)
    fit, rmsd = kabsch_fit(src, truth.apply(src))
    assert np.allclose(fit.rotation, truth.rotation, atol=1e-10)
    assert np.allclose(fit.translation, truth.translation, atol=1e-10)
    assert rmsd < 1e-10


def test_kabsch_never_returns_a_reflection():
    rng = np.random.default_rng(1)
    src = rng.normal(size=(8, 3))
    mirrored = src * np.array([-1.0, 1.0, 1.0])
    fit, _ = kabsch_fit(src, mirrored)
    assert np.linalg.det(fit.rotation) == pytest.approx(1.0)


@pytest.mark.parametrize("pts", [np.zeros((2, 3)), np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]])])
def test_kabsch_rejects_degenerate_sets(pts):
    with pytest.raises(UnderdeterminedError):
        kabsch_fit(pts, pts)


def test_transform_compose_and_inverse():
    rng = np.random.default_rng(2)
    a, b = random_transform(rng), random_transform(rng)
    p = rng.normal(size=(5, 3))
    assert np.allclose((a @ b).apply(p), a.apply(b.apply(p)))
    assert np.allclose(a.inverse().apply(a.apply(p)), p)
    assert np.allclose(a.apply_inverse(a.apply(p)), p)


def test_rotation_6d_round_trip():
    r = Rotation.random(20, random_state=3).as_matrix()
    back = np.stack([rotation_from_6d(rotation_6d(m)) for m in r])
    assert np.allclose(back, r, atol=1e-12)


def test_geodesic_angle_about_z():
    a = Rotation.from_euler("z", 0.3).as_matrix()
    assert geodesic_angle(a, np.eye(3)) == pytest.approx(0.3)


def test_canonical_rotvec_keeps_rotation_and_bounds_angle():
    v = np.array([[0.0, 0.0, 4.0], [1.0, 2.0, 2.0]])
    c = canonical_rotvec(v)
    assert np.all(np.linalg.norm(c, axis=1) < 2 * np.pi)
    assert np.allclose(c[1], v[1])  # already below one turn
    assert np.allclose(rotvec_to_matrix(c), rotvec_to_matrix(v))


def test_orthonormalize_projects_to_rotation():
    m = np.eye(3) + 0.01 * np.random.default_rng(4).normal(size=(3, 3))
    r = orthonormalize(m)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)


def test_box_is_closed_and_signed_distance_sign():
    box = make_box((0, 0, 0), (1, 1, 1), (2, 3, 4))
    sd = signed_distance(box, np.array([[0, 0, 0], [2, 0, 0], [0.4, 0, 0.0]]))
    assert sd[0] == pytest.approx(-0.5)
    assert sd[1] == pytest.approx(1.5)
    assert sd[2] == pytest.approx(-0.1)


def test_unsigned_distance_to_face_and_corner():
    box = make_box((0, 0, 0), (2, 2, 2))
    d, _ = unsigned_distance(box, np.array([[0, 0, 3.0], [2, 2, 2.0]]))
    assert np.allclose(d, [2.0, np.sqrt(3.0)])


def test_obj_round_trip(tmp_path):
    mesh = make_icosphere(0.3, 2)
    save_obj(mesh, tmp_path / "s.obj")
    back = load_obj(tmp_path / "s.obj")
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.faces, mesh.faces)


def test_sdf_grid_matches_sphere():
    r = 0.2
    grid = build_sdf(make_icosphere(r, 4), 0.02, padding=0.06)
    pts = np.random.default_rng(5).uniform(-0.25, 0.25, (300, 3))
    analytic = np.linalg.norm(pts, axis=1) - r
    assert np.max(np.abs(query_sdf(grid, pts) - analytic)) <= 1.5 * 0.02


def test_sdf_gradient_points_outward():
    grid = build_sdf(make_box((0, 0, 0), (0.4, 0.4, 0.4), (4, 4, 4)), 0.02, padding=0.06)
    _, g = query_sdf_grad(grid, np.array([[0.15, 0.0, 0.0]]))
    assert g[0, 0] > 0.5 and abs(g[0, 1]) < 0.1


def test_sdf_serialization_round_trip():
    grid = build_sdf(make_box((0, 0, 0), (0.2, 0.2, 0.2)), 0.05)
    back = SdfGrid.from_bytes(grid.to_bytes())
    assert np.array_equal(back.values, grid.values)
    assert np.array_equal(back.origin, grid.origin) and back.cell == grid.cell


def test_penetration_depth_clips_outside():
    assert np.array_equal(penetration_depth(np.array([-0.2, 0.0, 0.3])), [0.2 - SURFACE_EPS, 0.0, 0.0])


seeds = st.integers(0, 2 ** 32 - 1)


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(0.01, 10.0))
def test_kabsch_recovers_any_rigid_motion(seed, scale):
    rng = np.random.default_rng(seed)
    truth = random_transform(rng, scale)
    src = rng.normal(size=(6, 3)) * scale
    fit, rms = kabsch_fit(src, truth.apply(src))
    assert np.linalg.norm(fit.rotation - truth.rotation) < 1e-8
    assert np.linalg.norm(fit.translation - truth.translation) < 1e-8 * max(scale, 1.0)
    assert rms < 1e-8 * max(scale, 1.0)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_point_triangle_distance_is_bracketed(seed):
    # Never more than the nearest corner, never less than the distance to the plane.
    rng = np.random.default_rng(seed)
    a, b, c, p = rng.normal(size=(4, 50, 3))
    from hoisynth.geometry.mesh import point_triangle_distance

    d = point_triangle_distance(p, a, b, c)
    corner = np.min([np.linalg.norm(p - v, axis=1) for v in (a, b, c)], axis=0)
    n = np.cross(b - a, c - a)
    plane = np.abs(np.einsum("ij,ij->i", p - a, n)) / np.linalg.norm(n, axis=1)
    assert np.all(d <= corner + 1e-12) and np.all(d >= plane - 1e-12)


_TWO_BOXES = merge_meshes([make_box((0, 0, 0), (0.4, 0.2, 0.3), (2, 2, 2)),
                           make_box((0.5, 0.1, 0), (0.2, 0.2, 0.2), (2, 2, 2))])


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_pruned_depths_equal_the_full_signed_distance(seed):
    pts = np.random.default_rng(seed).uniform(-0.4, 0.8, (200, 3))
    depth = penetration_depths(_TWO_BOXES, pts)
    assert np.array_equal(depth, np.maximum(-signed_distance(_TWO_BOXES, pts), 0.0))
