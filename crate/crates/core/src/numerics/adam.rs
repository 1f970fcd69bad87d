use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub first: Vec<Vec<S>>,
    pub second: Vec<Vec<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    /// Zero state shaped like `shapes` (tensor lengths).
    pub fn new(shapes: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            first: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
            second: shapes.iter().map(|&n| vec![S::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn for_tensors(tensors: &[&[S]], config: AdamConfig) -> Self {
        let shapes: Vec<usize> = tensors.iter().map(|t| t.len()).collect();
        Self::new(&shapes, config)
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// Gradients are validated before anything is touched: a non-finite
    /// entry aborts with the tensor index and the largest magnitude seen.
    pub fn step(&mut self, params: Vec<&mut [S]>, grads: &[&[S]], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} tensors in state, {} params, {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("adam: learning rate {lr} must be > 0")));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.first[i].len() || params[i].len() != g.len() {
                return Err(crate::error::shape_err(format!("adam tensor {i}"), self.first[i].len(), g.len()));
            }
            if g.iter().any(|x| !x.is_finite()) {
                let max_abs = g
                    .iter()
                    .map(|x| x.as_f64().abs())
                    .fold(0.0f64, f64::max);
                return Err(Error::NonFiniteGradient { tensor: i, max_abs });
            }
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (S::of(beta1), S::of(beta2));
        let (one_b1, one_b2) = (S::of(1.0 - beta1), S::of(1.0 - beta2));
        let step_size = S::of(lr / c1);
        let inv_c2 = S::of(1.0 / c2);
        let eps = S::of(eps);

        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let denom = (v[j] * inv_c2).sqrt() + eps;
                p[j] = p[j] - step_size * m[j] / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0f64];
        let mut st = AdamState::<f64>::new(&[1], AdamConfig::default());
        st.step(vec![&mut p], &[&[1.0]], 0.1).unwrap();
        // m_hat = v_hat = 1  =>  p = -0.1 / (1 + 1e-8)
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = vec![1.0f64, -2.0];
        let mut st = AdamState::<f64>::new(&[2], AdamConfig::default());
        st.step(vec![&mut p], &[&[0.5, -0.5]], 0.01).unwrap();
        let before = p.clone();
        let m_before = st.first[0].clone();
        // A zero gradient still applies momentum; moments shrink geometrically.
        st.step(vec![&mut p], &[&[0.0, 0.0]], 0.01).unwrap();
        for (m1, m0) in st.first[0].iter().zip(&m_before) {
            assert!((m1 - 0.9 * m0).abs() < 1e-15);
        }

        let mut q = vec![3.0f64];
        let mut fresh = AdamState::<f64>::new(&[1], AdamConfig::default());
        fresh.step(vec![&mut q], &[&[0.0]], 0.1).unwrap();
        assert_eq!(q[0], 3.0);
        assert_eq!(fresh.first[0][0], 0.0);
        assert_eq!(fresh.second[0][0], 0.0);
        assert_ne!(before, p);
    }

    #[test]
    fn identical_tensors_update_identically() {
        let mut a = vec![0.3f32, -1.0, 2.0];
        let mut b = a.clone();
        let g = [0.1f32, -0.2, 0.7];
        let mut st = AdamState::<f32>::new(&[3, 3], AdamConfig::default());
        for _ in 0..5 {
            st.step(vec![&mut a, &mut b], &[&g, &g], 1e-2).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut p = vec![1.0f64, 2.0];
        let mut st = AdamState::<f64>::new(&[1, 1], AdamConfig::default());
        let (p0, p1) = p.split_at_mut(1);
        let err = st.step(vec![p0, p1], &[&[0.5], &[f64::INFINITY]], 0.1).unwrap_err();
        match err {
            Error::NonFiniteGradient { tensor, .. } => assert_eq!(tensor, 1),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(st.step, 0);
    }
}
