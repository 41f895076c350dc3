use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{icp_point_to_plane, IcpOptions, Mesh, LEFT_EYE_OUTER, NOSE_TIP, RIGHT_EYE_OUTER};

/// Sorted non-negative error values plus the constant they were divided by.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorDistribution {
    pub values: Vec<f64>,
    pub normalization: f64,
}

impl ErrorDistribution {
    pub fn new(mut values: Vec<f64>, normalization: f64) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidArgument(format!("error value {bad} is not a finite non-negative number")));
        }
        if !(normalization.is_finite() && normalization > 0.0) {
            return Err(Error::InvalidArgument(format!("normalization {normalization} must be positive")));
        }
        values.sort_by(f64::total_cmp);
        Ok(ErrorDistribution { values, normalization })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean_std(&self.values).0
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        mean_std(&self.values).1
    }
}

/// Mean and population standard deviation (`0, 0` for an empty slice).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Anything that maps a mesh to its reconstruction by a shape model.
pub trait Reconstructor {
    fn reconstruct(&self, meshes: &[Mesh]) -> Result<Vec<Mesh>>;
}

/// Returns its input; the zero-error reference.
pub struct IdentityModel;

impl Reconstructor for IdentityModel {
    fn reconstruct(&self, meshes: &[Mesh]) -> Result<Vec<Mesh>> {
        Ok(meshes.to_vec())
    }
}

/// Adapts a closure into a [`Reconstructor`].
pub struct FnReconstructor<F>(pub F);

impl<F: Fn(&[Mesh]) -> Result<Vec<Mesh>>> Reconstructor for FnReconstructor<F> {
    fn reconstruct(&self, meshes: &[Mesh]) -> Result<Vec<Mesh>> {
        (self.0)(meshes)
    }
}

/// Per-vertex distances between each test mesh and its reconstruction,
/// pooled over the set and divided by `normalization`.
pub fn generalization_errors(model: &dyn Reconstructor, test: &[Mesh], normalization: f64) -> Result<ErrorDistribution> {
    let recon = model.reconstruct(test)?;
    if recon.len() != test.len() {
        return Err(Error::Shape(format!(
            "model returned {} meshes for {} inputs",
            recon.len(),
            test.len()
        )));
    }
    let mut values = Vec::new();
    for (i, (a, b)) in test.iter().zip(&recon).enumerate() {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "reconstruction {i} has {} vertices, input has {}",
                b.len(),
                a.len()
            )));
        }
        values.extend(a.vertices.iter().zip(&b.vertices).map(|(p, q)| (p - q).norm() / normalization));
    }
    ErrorDistribution::new(values, normalization)
}

/// Cumulative error distribution summary.
#[derive(Clone, Debug, PartialEq)]
pub struct CedReport {
    /// `(e, fraction of errors ≤ e)` at evenly spaced `e` in `[0, x_max]`.
    pub curve: Vec<(f64, f64)>,
    pub auc: f64,
    pub fr: f64,
    pub x_max: f64,
    pub threshold: f64,
}

/// Default CED axis bound, in normalized units.
pub const DEFAULT_X_MAX: f64 = 0.01;

/// Fraction of errors at or below `e`.
pub fn ced_at(errs: &ErrorDistribution, e: f64) -> f64 {
    errs.values.partition_point(|&v| v <= e) as f64 / errs.len() as f64
}

/// The CED curve sampled at `points` abscissae, its normalized area up to
/// `x_max` (computed exactly) and the failure rate above `fail_threshold`.
pub fn ced_auc_fr(errs: &ErrorDistribution, x_max: f64, fail_threshold: f64, points: usize) -> Result<CedReport> {
    if errs.is_empty() {
        return Err(Error::InvalidArgument("error distribution is empty".into()));
    }
    if !(x_max > 0.0 && x_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("CED bound {x_max} must be positive")));
    }
    let n = errs.len() as f64;
    // The area under a step CED is the mean of max(0, x_max - e).
    let auc = errs.values.iter().map(|&e| (x_max - e).max(0.0)).sum::<f64>() / (n * x_max);
    let fr = errs.values.iter().filter(|&&e| e > fail_threshold).count() as f64 / n;
    let points = points.max(2);
    let curve = (0..points)
        .map(|i| {
            let e = x_max * i as f64 / (points - 1) as f64;
            (e, ced_at(errs, e))
        })
        .collect();
    Ok(CedReport {
        curve,
        auc,
        fr,
        x_max,
        threshold: fail_threshold,
    })
}

#[derive(Clone, Debug)]
pub struct RmseOptions {
    /// Ground-truth vertices farther than this from the nose tip are ignored.
    pub crop_radius: f64,
    pub icp: IcpOptions,
}

impl Default for RmseOptions {
    fn default() -> Self {
        RmseOptions {
            crop_radius: 150.0,
            icp: IcpOptions::default(),
        }
    }
}

/// Point-to-plane RMSE after rigid alignment of `pred` onto `gt`, over the
/// cropped face region, divided by the inter-ocular distance of `gt`.
pub fn rmse3d_translation(pred: &Mesh, gt: &Mesh, options: &RmseOptions) -> Result<f64> {
    let nose = gt.landmark_point(NOSE_TIP)?;
    let iod = (gt.landmark_point(LEFT_EYE_OUTER)? - gt.landmark_point(RIGHT_EYE_OUTER)?).norm();
    if !(iod > 1e-12 * gt.bbox_diagonal().max(1e-300)) {
        return Err(Error::Degenerate(format!("inter-ocular distance {iod} is degenerate")));
    }
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction has {} vertices, ground truth has {}",
            pred.len(),
            gt.len()
        )));
    }
    let crop: Vec<usize> = (0..gt.len())
        .filter(|&i| (gt.vertices[i] - nose).norm() <= options.crop_radius)
        .collect();
    let icp = IcpOptions {
        subset: Some(crop),
        ..options.icp.clone()
    };
    let fit = icp_point_to_plane(pred, gt, &icp)?;
    Ok(fit.rmse / iod)
}

/// Per-sample nearest-neighbour distances plus their mean and population std.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecificityReport {
    pub distances: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// For each generated mesh, the smallest mean per-vertex distance to any test mesh.
pub fn specificity(generated: &[Mesh], test: &[Mesh]) -> Result<SpecificityReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("specificity needs at least one test mesh".into()));
    }
    let n = test[0].len();
    if let Some(bad) = generated.iter().chain(test).find(|m| m.len() != n) {
        return Err(Error::Shape(format!(
            "meshes must share a vertex count: {} vs {n}",
            bad.len()
        )));
    }
    let distances: Vec<f64> = generated
        .par_iter()
        .map(|g| test.iter().map(|t| g.mean_vertex_distance(t)).fold(f64::INFINITY, f64::min))
        .collect();
    let (mean, std) = mean_std(&distances);
    Ok(SpecificityReport { distances, mean, std })
}
