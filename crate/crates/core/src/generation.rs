//! Latent-Gaussian face generation from a trained generator.
//!
//! Bottleneck vectors of the training set are stacked into `Z`, a Gaussian
//! `𝒩(μ, A·Aᵀ)` with `A = (Z − μ)/√(N − 1)` is fitted, and new faces are
//! decoded from draws `z = μ + A·ε`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{sample_mesh_from_uv, Mesh, UvLayout, UvMap};
use crate::model::NetParams;
use crate::training::{apply_inputs, PairedDataset};

/// Gaussian over bottleneck vectors in low-rank factored form.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussian {
    pub mean: DVector<f64>,
    /// `N_b × N`; the covariance is `factor · factorᵀ`.
    pub factor: DMatrix<f64>,
    pub label: Option<usize>,
}

impl LatentGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    /// `μ + A·ε` with `ε ~ 𝒩(0, I_N)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let eps = DVector::from_fn(self.factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * eps
    }
}

/// Bottleneck vectors of every sample's input, one column per sample.
pub fn collect_bottlenecks(g: &NetParams<f32>, data: &PairedDataset) -> Result<DMatrix<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot collect bottlenecks of an empty dataset".into()));
    }
    let nb = g.config.latent_dim;
    let mut z = DMatrix::zeros(nb, data.len());
    let mut col = 0;
    for input in apply_inputs(data, false, 16)? {
        let latent = g.encode_batch(&input)?;
        for row in latent.data().chunks(nb) {
            for (i, &v) in row.iter().enumerate() {
                z[(i, col)] = v as f64;
            }
            col += 1;
        }
    }
    Ok(z)
}

/// Row means and the scaled centered factor of `z` (`N_b × N`).
pub fn fit_latent_gaussian(z: &DMatrix<f64>) -> Result<LatentGaussian> {
    let n = z.ncols();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a latent Gaussian needs at least 2 samples, got {n}"
        )));
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("bottleneck matrix".into()));
    }
    let mean = z.column_mean();
    let mut factor = z.clone();
    let scale = 1.0 / ((n - 1) as f64).sqrt();
    for mut c in factor.column_iter_mut() {
        c -= &mean;
        c *= scale;
    }
    Ok(LatentGaussian {
        mean,
        factor,
        label: None,
    })
}

pub fn sample_latent<R: Rng + ?Sized>(gaussian: &LatentGaussian, rng: &mut R) -> DVector<f64> {
    gaussian.sample(rng)
}

/// Decoder-only outputs for a set of latents, skips zeroed.
pub fn decode_latents(g: &NetParams<f32>, latents: &[DVector<f64>]) -> Result<Vec<UvMap>> {
    let nb = g.config.latent_dim;
    if let Some(bad) = latents.iter().find(|z| z.len() != nb) {
        return Err(Error::Shape(format!("latent has length {}, expected {nb}", bad.len())));
    }
    let res = g.config.resolution;
    let mut maps = Vec::with_capacity(latents.len());
    for chunk in latents.chunks(16) {
        let data = chunk.iter().flat_map(|z| z.iter().map(|&v| v as f32)).collect();
        let out = g.decode_batch(&Tensor::new(vec![chunk.len(), nb], data)?)?;
        for t in out.unstack() {
            maps.push(UvMap::from_f32(res, res, 3, t.data())?);
        }
    }
    Ok(maps)
}

/// Decodes one latent into a position map and the corresponding mesh.
pub fn generate_face(g: &NetParams<f32>, z: &DVector<f64>, layout: &UvLayout) -> Result<(UvMap, Mesh)> {
    let map = decode_latents(g, std::slice::from_ref(z))?.remove(0);
    let mesh = sample_mesh_from_uv(&map, layout)?;
    Ok((map, mesh))
}

/// `n` faces drawn from `gaussian` with a seeded stream.
pub fn generate_faces<R: Rng + ?Sized>(
    g: &NetParams<f32>,
    gaussian: &LatentGaussian,
    layout: &UvLayout,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Mesh>> {
    let latents: Vec<_> = (0..n).map(|_| gaussian.sample(rng)).collect();
    decode_latents(g, &latents)?
        .iter()
        .map(|m| sample_mesh_from_uv(m, layout))
        .collect()
}

/// One Gaussian per label, each fitted on that label's samples only.
pub fn fit_label_gaussians(g: &NetParams<f32>, data: &PairedDataset) -> Result<BTreeMap<usize, LatentGaussian>> {
    if data.label_count == 0 {
        return Err(Error::InvalidArgument("dataset carries no labels".into()));
    }
    let z = collect_bottlenecks(g, data)?;
    let mut out = BTreeMap::new();
    for label in 0..data.label_count {
        let cols: Vec<usize> = (0..data.len()).filter(|&i| data.samples[i].label == Some(label)).collect();
        if cols.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "label {label} has {} samples, at least 2 are needed",
                cols.len()
            )));
        }
        let mut gaussian = fit_latent_gaussian(&z.select_columns(&cols))?;
        gaussian.label = Some(label);
        out.insert(label, gaussian);
    }
    Ok(out)
}
