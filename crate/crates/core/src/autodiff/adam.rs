use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Hyperparameters of the Adam optimizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for an ordered list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>, config: AdamConfig) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|s| (Tensor::zeros(s), Tensor::zeros(s)))
            .unzip();
        AdamState {
            config,
            step: 0,
            m,
            v,
        }
    }

    /// One bias-corrected Adam update. Parameters whose `frozen` flag is set
    /// are skipped entirely and keep their exact bit patterns; their
    /// gradient entry may be `None`.
    pub fn update(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[Option<&Tensor<T>>],
        frozen: &[bool],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() || frozen.len() != params.len()
        {
            return Err(Error::Shape(format!(
                "adam state tracks {} parameters, got {} params / {} grads / {} flags",
                self.m.len(),
                params.len(),
                grads.len(),
                frozen.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if frozen[i] {
                continue;
            }
            let g = g.ok_or_else(|| {
                Error::InvalidArgument(format!("missing gradient for parameter {i}"))
            })?;
            if g.shape() != params[i].shape() {
                return Err(Error::Shape(format!(
                    "gradient {i} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    params[i].shape()
                )));
            }
            g.ensure_finite("gradient")?;
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let step_size = T::from_f64(lr / bc1);
        let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
        let eps = T::from_f64(c.eps);

        for (i, p) in params.iter_mut().enumerate() {
            if frozen[i] {
                continue;
            }
            let g = grads[i].expect("checked above");
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = b1 * *mj + one_b1 * gj;
                *vj = b2 * *vj + one_b2 * gj * gj;
                let denom = vj.sqrt() * inv_sqrt_bc2 + eps;
                *pj = *pj - step_size * *mj / denom;
            }
        }
        Ok(())
    }
}
