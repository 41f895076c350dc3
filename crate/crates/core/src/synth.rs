//! Synthetic heads in dense correspondence.
//!
//! A latitude/longitude patch of an ellipsoid carries nose, eye socket, brow,
//! mouth and chin bumps along its normal. Subjects add smooth normal
//! displacement modes with Gaussian coefficients; labels add fixed offsets;
//! noise adds independent per-vertex normal jitter. Units are millimetres.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Point, LEFT_EYE_OUTER, NOSE_TIP, RIGHT_EYE_OUTER};

const RADII: [f64; 3] = [75.0, 100.0, 90.0];
const THETA_MAX: f64 = 1.3;
const PHI_MIN: f64 = -0.95;
const PHI_MAX: f64 = 0.85;
const NOSE_AT: (f64, f64) = (0.0, -0.05);
const EYE_AT: (f64, f64) = (0.32, 0.22);
const EYE_OUTER_AT: (f64, f64) = (0.52, 0.22);

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    pub modes: usize,
    /// Standard deviation of the per-vertex normal noise.
    pub noise: f64,
    /// Label count; 0 disables labels. With `L > 0` every subject appears once per label.
    pub labels: usize,
    pub seed: u64,
    /// Vertices per grid side.
    pub grid: usize,
    /// Standard deviation of the first mode's displacement amplitude.
    pub mode_scale: f64,
    /// Peak displacement of each label offset.
    pub label_scale: f64,
    /// Strength of the coefficient-dependent feature warp (0 keeps shapes linear in the coefficients).
    pub warp: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 200,
            modes: 10,
            noise: 0.0,
            labels: 0,
            seed: 0,
            grid: 45,
            mode_scale: 6.0,
            label_scale: 10.0,
            warp: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub template: Mesh,
    /// Meshes as observed, noise included.
    pub meshes: Vec<Mesh>,
    /// The same meshes before noise.
    pub clean: Vec<Mesh>,
    pub subjects: Vec<usize>,
    /// Label per mesh, empty without labels.
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
    /// Per-label vertex displacement added on top of the subject shape.
    pub label_offsets: Vec<Vec<Point>>,
    /// Mode coefficients per subject, in units of each mode's standard deviation.
    pub coefficients: Vec<Vec<f64>>,
}

pub fn label_name(index: usize) -> String {
    if index == 0 {
        "neutral".to_string()
    } else {
        format!("expression{index}")
    }
}

fn bump(theta: f64, phi: f64, at: (f64, f64), sigma: (f64, f64)) -> f64 {
    let a = (theta - at.0) / sigma.0;
    let b = (phi - at.1) / sigma.1;
    (-0.5 * (a * a + b * b)).exp()
}

/// Normal displacement of the facial features; `warp` scales the nose and
/// spreads the eyes as functions of the first two coefficients.
fn features(theta: f64, phi: f64, nose_gain: f64, eye_shift: f64) -> f64 {
    let eye = EYE_AT.0 + eye_shift;
    22.0 * nose_gain * bump(theta, phi, NOSE_AT, (0.1, 0.2))
        - 10.0 * (bump(theta, phi, (eye, EYE_AT.1), (0.12, 0.1)) + bump(theta, phi, (-eye, EYE_AT.1), (0.12, 0.1)))
        + 6.0 * bump(theta, phi, (0.0, 0.36), (0.45, 0.06))
        - 4.0 * bump(theta, phi, (0.0, -0.36), (0.18, 0.04))
        + 3.0 * (bump(theta, phi, (0.0, -0.32), (0.16, 0.03)) + bump(theta, phi, (0.0, -0.41), (0.14, 0.03)))
        + 8.0 * bump(theta, phi, (0.0, -0.65), (0.2, 0.12))
}

/// Smooth basis function `k` (0-based) over normalized patch coordinates.
fn mode(k: usize, u: f64, v: f64) -> f64 {
    // Enumerate (p, q) by total order, skipping the constant (a pure scale that alignment removes).
    let mut idx = 0;
    for total in 1.. {
        for p in 0..=total {
            let q = total - p;
            if idx == k {
                let fu = (p as f64 * std::f64::consts::PI * (u + 1.0) / 2.0).cos();
                let fv = (q as f64 * std::f64::consts::PI * (v + 1.0) / 2.0).cos();
                return fu * fv;
            }
            idx += 1;
        }
    }
    unreachable!()
}

struct Grid {
    n: usize,
    angles: Vec<(f64, f64)>,
    base: Vec<Point>,
    normals: Vec<Point>,
}

impl Grid {
    fn new(n: usize) -> Self {
        let mut angles = Vec::with_capacity(n * n);
        let mut base = Vec::with_capacity(n * n);
        let mut normals = Vec::with_capacity(n * n);
        for j in 0..n {
            let phi = PHI_MIN + (PHI_MAX - PHI_MIN) * j as f64 / (n - 1) as f64;
            for i in 0..n {
                let theta = -THETA_MAX + 2.0 * THETA_MAX * i as f64 / (n - 1) as f64;
                let p = Point::new(
                    RADII[0] * phi.cos() * theta.sin(),
                    RADII[1] * phi.sin(),
                    RADII[2] * phi.cos() * theta.cos(),
                );
                let normal = Point::new(p.x / RADII[0].powi(2), p.y / RADII[1].powi(2), p.z / RADII[2].powi(2)).normalize();
                angles.push((theta, phi));
                base.push(p);
                normals.push(normal);
            }
        }
        Grid {
            n,
            angles,
            base,
            normals,
        }
    }

    fn faces(&self) -> Vec<[usize; 3]> {
        let n = self.n;
        let mut faces = Vec::with_capacity(2 * (n - 1) * (n - 1));
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let a = j * n + i;
                // Counter-clockwise seen from outside (+z at the front).
                faces.push([a, a + 1, a + n + 1]);
                faces.push([a, a + n + 1, a + n]);
            }
        }
        faces
    }

    fn nearest(&self, at: (f64, f64)) -> usize {
        (0..self.angles.len())
            .min_by(|&a, &b| {
                let da = (self.angles[a].0 - at.0).powi(2) + (self.angles[a].1 - at.1).powi(2);
                let db = (self.angles[b].0 - at.0).powi(2) + (self.angles[b].1 - at.1).powi(2);
                da.total_cmp(&db)
            })
            .unwrap_or(0)
    }

    fn landmarks(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([
            (NOSE_TIP.to_string(), self.nearest(NOSE_AT)),
            (LEFT_EYE_OUTER.to_string(), self.nearest(EYE_OUTER_AT)),
            (RIGHT_EYE_OUTER.to_string(), self.nearest((-EYE_OUTER_AT.0, EYE_OUTER_AT.1))),
        ])
    }

    fn normalized(&self, v: usize) -> (f64, f64) {
        let (theta, phi) = self.angles[v];
        (theta / THETA_MAX, 2.0 * (phi - PHI_MIN) / (PHI_MAX - PHI_MIN) - 1.0)
    }

    /// Vertices displaced along the normal by `offset(vertex)`.
    fn displaced(&self, offset: impl Fn(usize) -> f64) -> Vec<Point> {
        (0..self.base.len()).map(|v| self.base[v] + self.normals[v] * offset(v)).collect()
    }
}

/// Normal displacement field of label `l` (zero for the neutral label).
fn label_field(l: usize, theta: f64, phi: f64) -> f64 {
    if l == 0 {
        return 0.0;
    }
    // Alternate between a raised-cheek smile and a dropped jaw, moving outward for higher labels.
    let spread = 0.08 * ((l - 1) / 2) as f64;
    if l % 2 == 1 {
        bump(theta, phi, (0.35 + spread, -0.3), (0.15, 0.12)) + bump(theta, phi, (-0.35 - spread, -0.3), (0.15, 0.12))
    } else {
        -bump(theta, phi, (0.0, -0.45 - spread), (0.3, 0.15))
    }
}

/// Mean-face template with its landmarks.
pub fn synth_template(grid: usize) -> Result<Mesh> {
    if grid < 5 {
        return Err(Error::InvalidArgument(format!("grid must have at least 5 vertices per side, got {grid}")));
    }
    let g = Grid::new(grid);
    let vertices = g.displaced(|v| features(g.angles[v].0, g.angles[v].1, 1.0, 0.0));
    Mesh::new(vertices, g.faces(), g.landmarks())
}

pub fn synth_dataset(config: &SynthConfig) -> Result<SynthDataset> {
    if config.modes < 1 {
        return Err(Error::InvalidArgument("at least one shape mode is required".into()));
    }
    if config.noise < 0.0 || config.mode_scale < 0.0 {
        return Err(Error::InvalidArgument("noise and mode scale must be non-negative".into()));
    }
    let template = synth_template(config.grid)?;
    let g = Grid::new(config.grid);
    let faces = g.faces();
    let landmarks = g.landmarks();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // A separate stream keeps clean shapes independent of the noise level.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e6f_6973_6500_0000);

    // Basis values per vertex, mode-major, with decaying standard deviations.
    let basis: Vec<Vec<f64>> = (0..config.modes)
        .map(|k| {
            let sigma = config.mode_scale / (1.0 + k as f64 / 3.0);
            (0..g.base.len())
                .map(|v| {
                    let (u, w) = g.normalized(v);
                    sigma * mode(k, u, w)
                })
                .collect()
        })
        .collect();
    let label_count = config.labels;
    let label_offsets: Vec<Vec<Point>> = (0..label_count)
        .map(|l| {
            (0..g.base.len())
                .map(|v| g.normals[v] * config.label_scale * label_field(l, g.angles[v].0, g.angles[v].1))
                .collect()
        })
        .collect();

    let mut out = SynthDataset {
        template,
        meshes: Vec::new(),
        clean: Vec::new(),
        subjects: Vec::new(),
        labels: Vec::new(),
        label_names: (0..label_count).map(label_name).collect(),
        label_offsets,
        coefficients: Vec::new(),
    };
    for s in 0..config.subjects {
        let coeffs: Vec<f64> = (0..config.modes).map(|_| rng.sample(StandardNormal)).collect();
        let nose_gain = 1.0 + config.warp * 0.3 * coeffs[0].tanh();
        let eye_shift = config.warp * 0.04 * coeffs.get(1).copied().unwrap_or(0.0).tanh();
        let shape = g.displaced(|v| {
            let (theta, phi) = g.angles[v];
            let linear: f64 = coeffs.iter().zip(&basis).map(|(c, b)| c * b[v]).sum();
            features(theta, phi, nose_gain, eye_shift) + linear
        });
        let variants: Vec<Option<usize>> = if label_count == 0 {
            vec![None]
        } else {
            (0..label_count).map(Some).collect()
        };
        for label in variants {
            let vertices: Vec<Point> = match label {
                Some(l) => shape.iter().zip(&out.label_offsets[l]).map(|(p, o)| p + o).collect(),
                None => shape.clone(),
            };
            let clean = Mesh::new(vertices, faces.clone(), landmarks.clone())?;
            let noisy = if config.noise > 0.0 {
                let jittered = clean
                    .vertices
                    .iter()
                    .zip(&g.normals)
                    .map(|(p, n)| p + n * (config.noise * noise_rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                clean.with_vertices(jittered)?
            } else {
                clean.clone()
            };
            out.meshes.push(noisy);
            out.clean.push(clean);
            out.subjects.push(s);
            if let Some(l) = label {
                out.labels.push(l);
            }
        }
        out.coefficients.push(coeffs);
    }
    Ok(out)
}
