use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam moments and hyperparameters over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 3e-4;

    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam step applied in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(format!(
                "adam state holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        self.apply(0, params, grads);
        Ok(())
    }

    /// Same step over a list of tensors laid out back to back, using each
    /// tensor's grad slot. Tensors without a gradient are treated as zero-gradient.
    pub fn update_tensors(&mut self, params: &mut [Tensor]) -> Result<()> {
        let total: usize = params.iter().map(Tensor::len).sum();
        if total != self.m.len() {
            return Err(Error::dim(format!(
                "adam state holds {} moments, tensors hold {total} values",
                self.m.len()
            )));
        }
        self.t += 1;
        let mut offset = 0;
        for p in params.iter_mut() {
            let n = p.len();
            if let Some(g) = p.grad().map(<[f64]>::to_vec) {
                self.apply(offset, p.data_mut(), &g);
            } else {
                self.apply(offset, p.data_mut(), &vec![0.0; n]);
            }
            offset += n;
        }
        Ok(())
    }

    fn apply(&mut self, offset: usize, params: &mut [f64], grads: &[f64]) {
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::new(3, 1e-3);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            adam.update(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(adam.t, 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = AdamState::new(1, 1e-3);
        let mut p = vec![0.0];
        adam.update(&mut p, &[1.0]).unwrap();
        // m_hat = v_hat = 1 -> step = lr / (1 + eps)
        assert!((p[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn second_step_also_moves_by_learning_rate() {
        let mut adam = AdamState::new(1, 1e-3);
        let mut p = vec![0.0];
        adam.update(&mut p, &[1.0]).unwrap();
        let after_first = p[0];
        adam.update(&mut p, &[1.0]).unwrap();
        assert!(((after_first - p[0]) - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let mut adam = AdamState::new(2, 1e-3);
        assert!(matches!(
            adam.update(&mut [0.0; 3], &[0.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            adam.update(&mut [0.0; 2], &[0.0; 1]),
            Err(Error::Dimension(_))
        ));
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn tensor_layout_matches_flat_update() {
        let mut a = AdamState::new(3, 1e-2);
        let mut b = a.clone();
        let mut flat = vec![1.0, 2.0, 3.0];
        a.update(&mut flat, &[0.1, -0.2, 0.3]).unwrap();

        let mut t1 = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut t2 = Tensor::new(vec![2], vec![2.0, 3.0]).unwrap();
        t1.set_grad(vec![0.1]).unwrap();
        t2.set_grad(vec![-0.2, 0.3]).unwrap();
        let mut ts = vec![t1, t2];
        b.update_tensors(&mut ts).unwrap();
        assert_eq!(ts[0].data()[0], flat[0]);
        assert_eq!(ts[1].data(), &flat[1..]);
    }

    proptest! {
        #[test]
        fn zero_gradient_is_identity_for_any_step(
            params in prop::collection::vec(-10.0f64..10.0, 1..8),
            warmup in 0usize..5,
        ) {
            let n = params.len();
            let mut adam = AdamState::new(n, 3e-4);
            let mut p = params.clone();
            // a few zero steps from a fresh state keep the moments at exactly zero
            for _ in 0..warmup {
                adam.update(&mut p, &vec![0.0; n]).unwrap();
            }
            adam.update(&mut p, &vec![0.0; n]).unwrap();
            prop_assert_eq!(p, params);
        }
    }
}
