//! Central finite-difference gradient checking at 64-bit precision.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
    /// `(input index, element index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Options for [`check_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is essentially zero are compared absolutely.
    pub floor: f64,
    /// Check at most this many evenly spread entries per input.
    pub max_entries_per_input: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            floor: 1e-6,
            max_entries_per_input: None,
        }
    }
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences, perturbing every (or a spread subset of) entries
/// of every input.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    options: GradCheckOptions,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = values
            .iter()
            .map(|t| g.leaf(t.clone(), false))
            .collect::<Result<Vec<_>>>()?;
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut graph = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| graph.leaf(t.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut graph, &vars)?;
    let grads = graph.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| grads.get_or_zeros(&graph, v))
        .collect();

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let len = input.len();
        let picks: Vec<usize> = match options.max_entries_per_input {
            Some(m) if m < len => (0..m).map(|j| j * len / m).collect(),
            _ => (0..len).collect(),
        };
        for idx in picks {
            let orig = input.data()[idx];
            work[ti].data_mut()[idx] = orig + options.eps;
            let plus = eval(&work)?;
            work[ti].data_mut()[idx] = orig - options.eps;
            let minus = eval(&work)?;
            work[ti].data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * options.eps);
            let a = analytic[ti].data()[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(options.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((ti, idx, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
