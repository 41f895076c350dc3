//! Optimal-step non-rigid ICP with per-vertex data weights.
//!
//! Every template vertex carries a 3×4 affine transform. For a stiffness
//! `α` and closest-point targets `U`, the stacked transforms `X` solve
//! `(α² L⊗G² + DᵀW²D) X = DᵀW²U`, where `L` is the edge Laplacian,
//! `G = diag(1, 1, 1, γ)` and row `i` of `D` is `[xᵢ yᵢ zᵢ 1]`. The system
//! is solved matrix-free with block-Jacobi preconditioned conjugate gradients.

use nalgebra::{Matrix4, Vector4};

use super::kdtree::KdTree;
use super::mesh::{Mesh, Point, NOSE_TIP};
use crate::error::{Error, Result};

/// `wᵢ = dᵢ / maxⱼ dⱼ` with `dᵢ` the distance from vertex `i` to the nose tip.
pub fn nose_distance_weights(template: &Mesh) -> Result<Vec<f64>> {
    let tip = template.landmark_point(NOSE_TIP)?;
    let d: Vec<f64> = template.vertices.iter().map(|p| (p - tip).norm()).collect();
    let max = d.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::Degenerate("every vertex sits on the nose tip".into()));
    }
    Ok(d.into_iter().map(|x| x / max).collect())
}

/// Geometric stiffness schedule from `from` down to `to` in `stages` steps.
pub fn geometric_schedule(from: f64, to: f64, stages: usize) -> Vec<f64> {
    match stages {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..stages)
            .map(|k| from * (to / from).powf(k as f64 / (stages - 1) as f64))
            .collect(),
    }
}

#[derive(Clone, Debug)]
pub struct NicpOptions {
    pub stiffness: Vec<f64>,
    /// Weight of the translation column in the smoothness term.
    pub gamma: f64,
    /// Closest-point iterations per stiffness stage.
    pub max_inner: usize,
    /// Inner loop stops once no vertex moves more than this (unit-size frame).
    pub tol: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for NicpOptions {
    fn default() -> Self {
        NicpOptions {
            stiffness: geometric_schedule(50.0, 1.0, 8),
            gamma: 1.0,
            max_inner: 10,
            tol: 1e-5,
            cg_tol: 1e-10,
            cg_max_iter: 5000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NicpResult {
    pub mesh: Mesh,
    /// Weighted mean squared distance to the closest scan point after each
    /// stage, in the caller's units.
    pub stage_residuals: Vec<f64>,
}

struct System<'a> {
    edges: &'a [(usize, usize)],
    degree: Vec<f64>,
    rows: Vec<Vector4<f64>>,
    w2: Vec<f64>,
    g2: Vector4<f64>,
    alpha2: f64,
}

impl System<'_> {
    fn apply(&self, x: &[Vector4<f64>], out: &mut [Vector4<f64>]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.rows[i] * (self.w2[i] * self.rows[i].dot(&x[i])) + (self.alpha2 * self.degree[i]) * x[i].component_mul(&self.g2);
        }
        for &(a, b) in self.edges {
            let da = x[b].component_mul(&self.g2) * self.alpha2;
            let db = x[a].component_mul(&self.g2) * self.alpha2;
            out[a] -= da;
            out[b] -= db;
        }
    }

    fn preconditioner(&self) -> Result<Vec<Matrix4<f64>>> {
        (0..self.rows.len())
            .map(|i| {
                let block = self.rows[i] * self.rows[i].transpose() * self.w2[i]
                    + Matrix4::from_diagonal(&(self.g2 * (self.alpha2 * self.degree[i])));
                block.try_inverse().ok_or_else(|| {
                    Error::Numerical(format!("singular preconditioner block at vertex {i}"))
                })
            })
            .collect()
    }
}

fn dot(a: &[Vector4<f64>], b: &[Vector4<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Preconditioned conjugate gradients, warm-started from `x`.
fn pcg(sys: &System, pre: &[Matrix4<f64>], rhs: &[Vector4<f64>], x: &mut [Vector4<f64>], tol: f64, max_iter: usize) -> Result<()> {
    let n = rhs.len();
    let mut ax = vec![Vector4::zeros(); n];
    sys.apply(x, &mut ax);
    let mut r: Vec<Vector4<f64>> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let target = tol * dot(rhs, rhs).sqrt().max(f64::MIN_POSITIVE);
    if dot(&r, &r).sqrt() <= target {
        return Ok(());
    }
    let mut z: Vec<Vector4<f64>> = pre.iter().zip(&r).map(|(m, v)| m * v).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        sys.apply(&p, &mut ax);
        let pap = dot(&p, &ax);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::Numerical("nicp system is not positive definite".into()));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += p[i] * step;
            r[i] -= ax[i] * step;
        }
        if dot(&r, &r).sqrt() <= target {
            return Ok(());
        }
        for i in 0..n {
            z[i] = pre[i] * r[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + p[i] * beta;
        }
    }
    // An unconverged solve still lowers the energy; accept it unless it is garbage.
    if x.iter().all(|v| v.iter().all(|c| c.is_finite())) {
        Ok(())
    } else {
        Err(Error::NonFinite("nicp solution".into()))
    }
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut components = n;
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components <= 1
}

/// Deforms `template` toward the `scan` points. `data_weights[i]` scales
/// how strongly vertex `i` is pulled onto the scan.
pub fn nicp_fit(template: &Mesh, scan: &[Point], data_weights: &[f64], options: &NicpOptions) -> Result<NicpResult> {
    let n = template.len();
    if data_weights.len() != n {
        return Err(Error::Shape(format!(
            "{} data weights for {n} template vertices",
            data_weights.len()
        )));
    }
    if scan.is_empty() {
        return Err(Error::InvalidArgument("nicp scan has no points".into()));
    }
    let edges = template.edges();
    if n == 0 || !connected(n, &edges) {
        return Err(Error::Degenerate(
            "template mesh is not connected; the stiffness system is singular".into(),
        ));
    }
    if data_weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Degenerate("all nicp data weights are zero".into()));
    }

    // Work in a unit-size frame so the stiffness values are scale free.
    let center = template.centroid();
    let scale = (template.vertices.iter().map(|p| (p - center).norm_squared()).sum::<f64>() / n as f64).sqrt();
    if scale <= 0.0 {
        return Err(Error::Degenerate("template has zero size".into()));
    }
    let to_unit = |p: &Point| (p - center) / scale;
    let source: Vec<Point> = template.vertices.iter().map(to_unit).collect();
    let scan_unit: Vec<Point> = scan.iter().map(to_unit).collect();
    let tree = KdTree::new(&scan_unit);

    let mut degree = vec![0.0; n];
    for &(a, b) in &edges {
        degree[a] += 1.0;
        degree[b] += 1.0;
    }
    let rows: Vec<Vector4<f64>> = source.iter().map(|p| Vector4::new(p.x, p.y, p.z, 1.0)).collect();
    let w2: Vec<f64> = data_weights.iter().map(|w| w * w).collect();
    let g2 = Vector4::new(1.0, 1.0, 1.0, options.gamma * options.gamma);

    // Column k of every vertex's affine transform, initialized to identity.
    let mut x: [Vec<Vector4<f64>>; 3] = std::array::from_fn(|k| {
        let mut e = Vector4::zeros();
        e[k] = 1.0;
        vec![e; n]
    });
    let deformed = |x: &[Vec<Vector4<f64>>; 3]| -> Vec<Point> {
        (0..n)
            .map(|i| Point::new(rows[i].dot(&x[0][i]), rows[i].dot(&x[1][i]), rows[i].dot(&x[2][i])))
            .collect()
    };
    let closest = |pts: &[Point]| -> Vec<Point> {
        pts.iter()
            .map(|p| scan_unit[tree.nearest(p).expect("scan is non-empty").0])
            .collect()
    };
    let weight_sum: f64 = w2.iter().sum();

    let mut stage_residuals = Vec::with_capacity(options.stiffness.len());
    let mut current = deformed(&x);
    for &alpha in &options.stiffness {
        let sys = System {
            edges: &edges,
            degree: degree.clone(),
            rows: rows.clone(),
            w2: w2.clone(),
            g2,
            alpha2: alpha * alpha,
        };
        let pre = sys.preconditioner()?;
        for _ in 0..options.max_inner.max(1) {
            let targets = closest(&current);
            for (k, col) in x.iter_mut().enumerate() {
                let rhs: Vec<Vector4<f64>> = (0..n).map(|i| rows[i] * (w2[i] * targets[i][k])).collect();
                pcg(&sys, &pre, &rhs, col, options.cg_tol, options.cg_max_iter)?;
            }
            let next = deformed(&x);
            let moved = next
                .iter()
                .zip(&current)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            current = next;
            if moved < options.tol {
                break;
            }
        }
        let targets = closest(&current);
        let residual: f64 = (0..n)
            .map(|i| w2[i] * (current[i] - targets[i]).norm_squared())
            .sum::<f64>()
            / weight_sum;
        stage_residuals.push(residual * scale * scale);
    }

    let vertices = current.iter().map(|p| p * scale + center).collect();
    Ok(NicpResult {
        mesh: template.with_vertices(vertices)?,
        stage_residuals,
    })
}
