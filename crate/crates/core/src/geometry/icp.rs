//! Rigid point-to-plane ICP.

use nalgebra::{Matrix6, Rotation3, Vector6};

use super::kdtree::KdTree;
use super::mesh::{Mesh, Point};
use super::procrustes::fit_similarity;
use super::transform::RigidTransform;
use crate::error::{Error, Result};

/// How source vertices are paired with target vertices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Correspondence {
    /// Vertex `i` pairs with vertex `i`; valid for meshes in dense correspondence.
    #[default]
    Index,
    /// Each transformed source vertex pairs with its closest target vertex.
    Closest,
}

#[derive(Clone, Debug)]
pub struct IcpOptions {
    pub max_iter: usize,
    /// Converged once the update's parameter norm drops below this.
    pub tol: f64,
    pub correspondence: Correspondence,
    /// Restricts the source to these vertices (all when `None`).
    pub subset: Option<Vec<usize>>,
}

impl Default for IcpOptions {
    fn default() -> Self {
        IcpOptions {
            max_iter: 50,
            tol: 1e-12,
            correspondence: Correspondence::Index,
            subset: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub iterations: usize,
    /// Root mean squared point-to-plane distance at the final transform.
    pub rmse: f64,
    /// Source vertices used, with their final target partners.
    pub pairs: Vec<(usize, usize)>,
}

/// Sum of squared point-to-plane distances for the given pairs.
pub fn point_to_plane_residual(
    transform: &RigidTransform,
    source: &[Point],
    target: &[Point],
    normals: &[Point],
    pairs: &[(usize, usize)],
) -> f64 {
    pairs
        .iter()
        .map(|&(s, t)| ((transform.apply(&source[s]) - target[t]).dot(&normals[t])).powi(2))
        .sum()
}

/// Rigid transform taking `source` onto `target`, minimizing the squared
/// distance of each source vertex to the tangent plane at its partner.
pub fn icp_point_to_plane(source: &Mesh, target: &Mesh, options: &IcpOptions) -> Result<IcpResult> {
    let normals = target.vertex_normals();
    let subset: Vec<usize> = match &options.subset {
        Some(s) => s.clone(),
        None => (0..source.len()).collect(),
    };
    if let Some(&bad) = subset.iter().find(|&&i| i >= source.len()) {
        return Err(Error::InvalidArgument(format!("icp subset index {bad} out of range")));
    }
    let tree = (options.correspondence == Correspondence::Closest).then(|| KdTree::new(&target.vertices));
    let pair_up = |transform: &RigidTransform| -> Result<Vec<(usize, usize)>> {
        let pairs: Vec<(usize, usize)> = match &tree {
            None => {
                if source.len() != target.len() {
                    return Err(Error::Shape(format!(
                        "index correspondence needs equal vertex counts, got {} and {}",
                        source.len(),
                        target.len()
                    )));
                }
                subset.iter().map(|&i| (i, i)).collect()
            }
            Some(tree) => subset
                .iter()
                .filter_map(|&i| tree.nearest(&transform.apply(&source.vertices[i])).map(|(j, _)| (i, j)))
                .collect(),
        };
        let pairs: Vec<_> = pairs
            .into_iter()
            .filter(|&(_, t)| normals[t].norm_squared() > 0.0)
            .collect();
        if pairs.len() < 6 {
            return Err(Error::InvalidArgument(format!(
                "icp needs at least 6 correspondences, found {}",
                pairs.len()
            )));
        }
        Ok(pairs)
    };

    let mut transform = RigidTransform::identity();
    if options.correspondence == Correspondence::Index {
        let pairs = pair_up(&transform)?;
        let src: Vec<Point> = pairs.iter().map(|&(s, _)| source.vertices[s]).collect();
        let dst: Vec<Point> = pairs.iter().map(|&(_, t)| target.vertices[t]).collect();
        if let Ok(init) = fit_similarity(&src, &dst, false) {
            transform = RigidTransform {
                rotation: init.rotation,
                translation: init.translation,
            };
        }
    }

    let mut iterations = 0;
    let mut pairs = pair_up(&transform)?;
    for it in 0..options.max_iter {
        iterations = it + 1;
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for &(s, t) in &pairs {
            let p = transform.apply(&source.vertices[s]);
            let n = normals[t];
            let r = (p - target.vertices[t]).dot(&n);
            let c = p.cross(&n);
            let row = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
            jtj += row * row.transpose();
            jtr += row * r;
        }
        let step = jtj
            .svd(true, true)
            .solve(&(-jtr), 1e-12 * jtj.amax().max(f64::MIN_POSITIVE))
            .map_err(|e| Error::Numerical(format!("icp normal equations: {e}")))?;
        if !step.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("icp update".into()));
        }
        let omega = step.fixed_rows::<3>(0).into_owned();
        let tau = step.fixed_rows::<3>(3).into_owned();
        let rot = *Rotation3::from_scaled_axis(omega).matrix();
        transform = RigidTransform {
            rotation: rot * transform.rotation,
            translation: rot * transform.translation + tau,
        };
        pairs = pair_up(&transform)?;
        if step.norm() < options.tol {
            break;
        }
    }
    let residual = point_to_plane_residual(&transform, &source.vertices, &target.vertices, &normals, &pairs);
    Ok(IcpResult {
        transform,
        iterations,
        rmse: (residual / pairs.len() as f64).sqrt(),
        pairs,
    })
}
