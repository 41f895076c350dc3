use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::metrics::Reconstructor;
use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point};

/// How many principal components to keep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Retain {
    /// Smallest `k` whose cumulative variance reaches this fraction of the total.
    Variance(f64),
    /// Exactly this many (capped at the available rank).
    Components(usize),
}

impl Default for Retain {
    fn default() -> Self {
        Retain::Variance(0.98)
    }
}

/// Linear shape model over flattened vertex coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `3V × k`, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Non-increasing per-component variances.
    pub variances: DVector<f64>,
    /// Topology donor for reconstructed meshes.
    pub template: Mesh,
}

pub fn flatten(mesh: &Mesh) -> DVector<f64> {
    DVector::from_iterator(3 * mesh.len(), mesh.vertices.iter().flat_map(|p| [p.x, p.y, p.z]))
}

pub fn unflatten(template: &Mesh, v: &DVector<f64>) -> Result<Mesh> {
    template.with_vertices(v.as_slice().chunks(3).map(|c| Point::new(c[0], c[1], c[2])).collect())
}

/// Smallest prefix of `eigenvalues` (sorted descending) holding `target` of the total.
pub fn components_for_variance(eigenvalues: &[f64], target: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (i, &l) in eigenvalues.iter().enumerate() {
        acc += l;
        if acc >= target * total {
            return i + 1;
        }
    }
    eigenvalues.len()
}

/// Eigen-decomposition of the sample covariance, via the `N × N` Gram matrix.
pub fn pca_fit(train: &[Mesh], retain: Retain) -> Result<PcaModel> {
    let n = train.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 meshes, got {n}")));
    }
    let template = train[0].clone();
    if let Some(bad) = train.iter().find(|m| m.len() != template.len()) {
        return Err(Error::Shape(format!(
            "PCA meshes must share a vertex count: {} vs {}",
            bad.len(),
            template.len()
        )));
    }
    let dim = 3 * template.len();
    let mut x = DMatrix::zeros(dim, n);
    for (j, m) in train.iter().enumerate() {
        x.set_column(j, &flatten(m));
    }
    let mean = x.column_mean();
    for mut c in x.column_iter_mut() {
        c -= &mean;
    }
    let gram = x.transpose() * &x / (n - 1) as f64;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    // Eigenvalues below this are numerical noise from the centring rank loss.
    let floor = top * 1e-12 * n as f64;
    let kept: Vec<usize> = order.into_iter().filter(|&i| eig.eigenvalues[i] > floor).collect();
    let values: Vec<f64> = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
    let k = match retain {
        Retain::Variance(t) => {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidArgument(format!("variance target {t} outside [0, 1]")));
            }
            components_for_variance(&values, t)
        }
        Retain::Components(k) => k.min(values.len()),
    };
    let mut components = DMatrix::zeros(dim, k);
    for (c, &i) in kept.iter().take(k).enumerate() {
        let u = eig.eigenvectors.column(i);
        let mut col = &x * u;
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        components.set_column(c, &col);
    }
    Ok(PcaModel {
        mean,
        components,
        variances: DVector::from_vec(values[..k].to_vec()),
        template,
    })
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.ncols()
    }

    pub fn project(&self, mesh: &Mesh) -> Result<DVector<f64>> {
        let v = flatten(mesh);
        if v.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "mesh has {} coordinates, model has {}",
                v.len(),
                self.mean.len()
            )));
        }
        Ok(self.components.tr_mul(&(v - &self.mean)))
    }

    pub fn decode(&self, coeffs: &DVector<f64>) -> Result<Mesh> {
        if coeffs.len() != self.k() {
            return Err(Error::Shape(format!("{} coefficients for {} components", coeffs.len(), self.k())));
        }
        unflatten(&self.template, &(&self.mean + &self.components * coeffs))
    }

    pub fn reconstruct_mesh(&self, mesh: &Mesh) -> Result<Mesh> {
        self.decode(&self.project(mesh)?)
    }

    /// Coefficients drawn from `𝒩(0, diag(variances))`.
    pub fn sample_coefficients<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.k(), |i, _| self.variances[i].sqrt() * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Mesh> {
        self.decode(&self.sample_coefficients(rng))
    }
}

impl Reconstructor for PcaModel {
    fn reconstruct(&self, meshes: &[Mesh]) -> Result<Vec<Mesh>> {
        meshes.iter().map(|m| self.reconstruct_mesh(m)).collect()
    }
}

pub fn pca_reconstruct(model: &PcaModel, mesh: &Mesh) -> Result<Mesh> {
    model.reconstruct_mesh(mesh)
}

pub fn pca_sample<R: Rng + ?Sized>(model: &PcaModel, rng: &mut R) -> Result<Mesh> {
    model.sample(rng)
}
