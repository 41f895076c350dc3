//! Pairwise and generalized Procrustes alignment, and dataset scaling.

use nalgebra::{Matrix3, SymmetricEigen};

use super::mesh::{Mesh, Point};
use super::transform::Similarity;
use crate::error::{Error, Result};

/// Least-squares similarity (or rigid, with `allow_scale = false`)
/// transform taking `source` onto `target`, never a reflection.
pub fn fit_similarity(source: &[Point], target: &[Point], allow_scale: bool) -> Result<Similarity> {
    if source.len() != target.len() {
        return Err(Error::Shape(format!(
            "procrustes needs matching point counts, got {} and {}",
            source.len(),
            target.len()
        )));
    }
    if source.is_empty() {
        return Err(Error::Degenerate("procrustes on empty point sets".into()));
    }
    let n = source.len() as f64;
    let mu_s = source.iter().sum::<Point>() / n;
    let mu_t = target.iter().sum::<Point>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let (ds, dt) = (s - mu_s, t - mu_t);
        cov += dt * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n;
    var_s /= n;
    let extent = source.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1.0);
    if var_s <= 1e-24 * extent * extent {
        return Err(Error::Degenerate(
            "source points all coincide; similarity is undefined".into(),
        ));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let d = (u * v_t).determinant().signum();
    let s_fix = Matrix3::from_diagonal(&Point::new(1.0, 1.0, d));
    let rotation = u * s_fix * v_t;
    let scale = if allow_scale {
        (svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2]) / var_s
    } else {
        1.0
    };
    Ok(Similarity {
        rotation,
        translation: mu_t - scale * (rotation * mu_s),
        scale,
    })
}

/// Similarity transform aligning `source` onto `target` (same vertex count).
pub fn procrustes_align(source: &Mesh, target: &Mesh) -> Result<Similarity> {
    fit_similarity(&source.vertices, &target.vertices, true)
}

/// Frame in which generalized Procrustes reports its results.
#[derive(Clone, Debug, Default)]
pub enum GpaFrame {
    /// Consensus aligned onto the first input, so identical inputs come back unchanged.
    #[default]
    FirstMesh,
    /// Consensus aligned onto an external reference (e.g. the template), making
    /// the output independent of every input's pose.
    Reference(Mesh),
    /// Centroid at the origin, unit RMS radius, principal axes as coordinate
    /// axes with signs fixed by the third moments. Intrinsic to the shapes.
    Principal,
}

#[derive(Clone, Debug)]
pub struct GpaOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub frame: GpaFrame,
}

impl Default for GpaOptions {
    fn default() -> Self {
        GpaOptions {
            tol: 1e-12,
            max_iter: 200,
            frame: GpaFrame::FirstMesh,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GpaResult {
    pub aligned: Vec<Mesh>,
    pub mean: Mesh,
    /// Transform taking each input onto its aligned copy.
    pub transforms: Vec<Similarity>,
    pub iterations: usize,
}

/// Iteratively aligns every mesh to the evolving consensus until the
/// consensus moves less than `tol` (RMS per vertex, unit-size frame).
pub fn generalized_procrustes(meshes: &[Mesh], options: &GpaOptions) -> Result<GpaResult> {
    let first = meshes
        .first()
        .ok_or_else(|| Error::InvalidArgument("generalized procrustes on no meshes".into()))?;
    if let Some(i) = meshes.iter().position(|m| !m.same_topology(first)) {
        return Err(Error::InvalidArgument(format!(
            "mesh {i} does not share the topology of mesh 0"
        )));
    }
    let mut reference = unit_size(&first.vertices)?;
    let mut transforms = vec![Similarity::identity(); meshes.len()];
    let mut iterations = 0;
    for it in 0..options.max_iter.max(1) {
        iterations = it + 1;
        let mut sum = vec![Point::zeros(); reference.len()];
        for (m, t) in meshes.iter().zip(transforms.iter_mut()) {
            *t = fit_similarity(&m.vertices, &reference, true)?;
            for (acc, p) in sum.iter_mut().zip(&m.vertices) {
                *acc += t.apply(p);
            }
        }
        let n = meshes.len() as f64;
        let mean: Vec<Point> = sum.into_iter().map(|p| p / n).collect();
        // Pin the consensus to the current reference so it cannot drift.
        let pin = fit_similarity(&unit_size(&mean)?, &reference, false)?;
        let next: Vec<Point> = unit_size(&mean)?.iter().map(|p| pin.apply(p)).collect();
        let moved = rms_distance(&next, &reference);
        reference = next;
        if moved < options.tol {
            break;
        }
    }
    for (m, t) in meshes.iter().zip(transforms.iter_mut()) {
        *t = fit_similarity(&m.vertices, &reference, true)?;
    }

    let to_frame = match &options.frame {
        GpaFrame::FirstMesh => fit_similarity(&reference, &first.vertices, true)?,
        GpaFrame::Reference(r) => {
            if r.len() != first.len() {
                return Err(Error::Shape(format!(
                    "GPA reference has {} vertices, meshes have {}",
                    r.len(),
                    first.len()
                )));
            }
            fit_similarity(&reference, &r.vertices, true)?
        }
        GpaFrame::Principal => principal_frame(&reference),
    };
    let mean = first.with_vertices(reference.iter().map(|p| to_frame.apply(p)).collect())?;
    let transforms: Vec<Similarity> = transforms.iter().map(|t| to_frame.compose(t)).collect();
    let aligned = meshes
        .iter()
        .zip(&transforms)
        .map(|(m, t)| t.apply_mesh(m))
        .collect::<Result<Vec<_>>>()?;
    Ok(GpaResult {
        aligned,
        mean,
        transforms,
        iterations,
    })
}

fn unit_size(points: &[Point]) -> Result<Vec<Point>> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Point>() / n;
    let rms = (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n).sqrt();
    if rms <= 0.0 || !rms.is_finite() {
        return Err(Error::Degenerate("shape has zero size".into()));
    }
    Ok(points.iter().map(|p| (p - c) / rms).collect())
}

fn rms_distance(a: &[Point], b: &[Point]) -> f64 {
    let n = a.len().max(1) as f64;
    (a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>() / n).sqrt()
}

/// Rotation taking a centered, unit-size point set onto its principal axes.
fn principal_frame(points: &[Point]) -> Similarity {
    let mut cov = Matrix3::zeros();
    for p in points {
        cov += p * p.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes: Vec<Point> = order.iter().map(|&i| eig.eigenvectors.column(i).into()).collect();
    let skew: Vec<f64> = axes
        .iter()
        .map(|a| points.iter().map(|p| p.dot(a).powi(3)).sum())
        .collect();
    // Fix signs on the two most skewed axes; the third follows from handedness.
    let mut by_skew = [0usize, 1, 2];
    by_skew.sort_by(|&a, &b| skew[b].abs().total_cmp(&skew[a].abs()));
    for &k in &by_skew[..2] {
        if skew[k] < 0.0 {
            axes[k] = -axes[k];
        }
    }
    let last = by_skew[2];
    let (i, j) = ((last + 1) % 3, (last + 2) % 3);
    axes[last] = axes[i].cross(&axes[j]);
    let rotation = Matrix3::from_rows(&[
        axes[0].transpose(),
        axes[1].transpose(),
        axes[2].transpose(),
    ]);
    Similarity {
        rotation,
        translation: Point::zeros(),
        scale: 1.0,
    }
}

/// Divides every coordinate by the dataset-wide largest absolute coordinate.
/// Returns the scaled meshes and that factor.
pub fn normalize_dataset(meshes: &[Mesh]) -> Result<(Vec<Mesh>, f64)> {
    let factor = meshes
        .iter()
        .flat_map(|m| m.vertices.iter())
        .map(|p| p.amax())
        .fold(0.0, f64::max);
    if factor <= 0.0 {
        return Err(Error::Degenerate(
            "every coordinate is zero; cannot normalize".into(),
        ));
    }
    let scaled = meshes
        .iter()
        .map(|m| m.with_vertices(m.vertices.iter().map(|p| p / factor).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok((scaled, factor))
}

pub fn denormalize(mesh: &Mesh, factor: f64) -> Result<Mesh> {
    mesh.with_vertices(mesh.vertices.iter().map(|p| p * factor).collect())
}
