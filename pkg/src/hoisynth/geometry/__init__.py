from .mesh import (
    TriMesh,
    load_obj,
    make_box,
    make_icosphere,
    merge_meshes,
    nearest_on_mesh,
    nearest_vertices,
    penetration_depths,
    save_obj,
    signed_distance,
    unsigned_distance,
)
from .sdf import SURFACE_EPS, SdfGrid, build_sdf, penetration_depth, query_sdf, query_sdf_grad
from .transforms import (
    RigidTransform,
    canonical_rotvec,
    geodesic_angle,
    kabsch_fit,
    matrix_to_rotvec,
    orthonormalize,
    rotation_6d,
    rotation_from_6d,
    rotvec_to_matrix,
)

__all__ = [
    "TriMesh", "load_obj", "make_box", "make_icosphere", "merge_meshes", "nearest_on_mesh",
    "nearest_vertices", "save_obj", "penetration_depths", "signed_distance", "unsigned_distance", "SURFACE_EPS",
    "SdfGrid", "build_sdf", "penetration_depth", "query_sdf", "query_sdf_grad", "RigidTransform",
    "canonical_rotvec", "geodesic_angle", "kabsch_fit", "matrix_to_rotvec", "orthonormalize",
    "rotation_6d", "rotation_from_6d", "rotvec_to_matrix",
]
