use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for an ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new<'a>(cfg: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self {
            cfg,
            m,
            v,
            step_count: 0,
        }
    }

    /// One update. A `None` gradient marks a frozen parameter: neither the
    /// parameter nor its moments are touched.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Option<Vec<f64>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(contract(format!(
                "adam holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() || g.as_ref().is_some_and(|g| g.len() != m.numel()) {
                return Err(contract("adam parameter/gradient shape changed"));
            }
        }
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let t = self.step_count as i32;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

/// Fails with a numeric error naming the first non-finite gradient.
pub fn check_grads(grads: &[Option<Vec<f64>>], names: &[String]) -> Result<()> {
    for (g, name) in grads.iter().zip(names) {
        if let Some(g) = g {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("gradient of {name}")));
            }
        }
    }
    Ok(())
}

/// Rescales gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flatten().flat_map(|g| g.iter()).map(|v| v * v).sum();
    let norm = math::sqrt(sq);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for v in grads.iter_mut().flatten().flat_map(|g| g.iter_mut()) {
            *v *= s;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![0.3, -0.2]);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        st.update(&mut [&mut p], &[Some(vec![0.0, 0.0])]).unwrap();
        assert_eq!(p.data(), &[0.3, -0.2]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new(AdamConfig::default(), [&p]);
        st.update(&mut [&mut p], &[Some(vec![1.0])]).unwrap();
        // m̂ = v̂ = 1 after bias correction, so the step is −lr / (1 + ε)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-18);
        assert!((p.data()[0] - -0.000999999995).abs() < 1e-11);
    }

    #[test]
    fn symmetric_params_stay_equal() {
        let mut a = Tensor::vector(vec![0.5, 0.5]);
        let mut b = Tensor::vector(vec![0.5, 0.5]);
        let mut st = AdamState::new(AdamConfig::default(), [&a, &b]);
        for k in 0..20 {
            let g = vec![0.1 * k as f64 - 0.7, 0.3];
            st.update(&mut [&mut a, &mut b], &[Some(g.clone()), Some(g)]).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_param_untouched() {
        let mut a = Tensor::vector(vec![1.0]);
        let mut b = Tensor::vector(vec![2.0]);
        let mut st = AdamState::new(AdamConfig::default(), [&a, &b]);
        st.update(&mut [&mut a, &mut b], &[Some(vec![1.0]), None]).unwrap();
        assert_ne!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 2.0);
        assert_eq!(st.v[1].data()[0], 0.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let err = check_grads(&[None, Some(vec![f64::NAN])], &["a".into(), "spatial.u_s".into()]).unwrap_err();
        assert_eq!(err, Error::Numeric("gradient of spatial.u_s".into()));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Some(vec![3.0, 4.0]), None, Some(vec![12.0])];
        let n = clip_global_norm(&mut g, 5.0);
        assert_eq!(n, 13.0);
        let after: f64 = g.iter().flatten().flatten().map(|v| v * v).sum::<f64>().sqrt();
        assert!((after - 5.0).abs() < 1e-12);
        let mut small = vec![Some(vec![0.1])];
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small[0].as_ref().unwrap()[0], 0.1);
    }
}
