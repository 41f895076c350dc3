//! Meshes, alignment, UV position maps and registration.

mod icp;
mod kdtree;
mod mesh;
mod nicp;
mod procrustes;
mod transform;
mod uv;

pub use icp::{icp_point_to_plane, point_to_plane_residual, Correspondence, IcpOptions, IcpResult};
pub use kdtree::KdTree;
pub use mesh::{read_landmarks, write_landmarks, Mesh, Point, LEFT_EYE_OUTER, NOSE_TIP, RIGHT_EYE_OUTER};
pub use nicp::{geometric_schedule, nicp_fit, nose_distance_weights, NicpOptions, NicpResult};
pub use procrustes::{
    denormalize, fit_similarity, generalized_procrustes, normalize_dataset, procrustes_align, GpaFrame,
    GpaOptions, GpaResult,
};
pub use transform::{RigidTransform, Similarity};
pub use uv::{
    barycentric_coords, cylindrical_coordinates, cylindrical_unwrap, nearest_fill, rasterize_uv,
    rasterize_uv_unfilled, sample_bilinear, sample_mesh_from_uv, RasterCache, UvLayout, UvMap,
};
