use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters. Defaults: lr 1e-4, betas (0.9, 0.999), eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single parameter buffer at step
/// `t >= 1`, updating the moment buffers in place.
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    cfg: &AdamConfig,
    t: u64,
) -> Result<()> {
    if grad.len() != param.len() || m.len() != param.len() || v.len() != param.len() {
        return Err(Error::ShapeMismatch("adam buffers differ in length".into()));
    }
    assert!(t >= 1, "adam step counter starts at 1");
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_b2 = T::from_f64(1.0 - cfg.beta2);
    let c1 = T::from_f64(1.0 / (1.0 - cfg.beta1.powf(t as f64)));
    let c2 = T::from_f64(1.0 / (1.0 - cfg.beta2.powf(t as f64)));
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * g * g;
        let m_hat = m[i] * c1;
        let v_hat = v[i] * c2;
        if cfg.lr != 0.0 {
            param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam state over an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using each tensor's gradient slot. Tensors
    /// without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::ZERO; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        for (k, p) in params.iter_mut().enumerate() {
            let grad = p.grad().map(<[T]>::to_vec).unwrap_or_else(|| vec![T::ZERO; p.len()]);
            adam_update(p.data_mut(), &grad, &mut self.m[k], &mut self.v[k], &self.config, self.step)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::<f32>::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        p.grad_mut();
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), before.data());
    }

    #[test]
    fn first_step_closed_form() {
        // t=1: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
        let cfg = AdamConfig::default();
        for &g in &[0.3f64, -2.0, 1e-3] {
            let mut p = [1.0f64];
            let (mut m, mut v) = ([0.0], [0.0]);
            adam_update(&mut p, &[g], &mut m, &mut v, &cfg, 1).unwrap();
            let expected = 1.0 - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p[0] - expected).abs() < 1e-15, "{g}");
            let step = 1.0 - p[0];
            assert_eq!(step.signum(), g.signum());
            assert!(step.abs() <= cfg.lr && step.abs() > cfg.lr * (1.0 - 1e-4));
        }
    }

    #[test]
    fn identical_states_give_identical_trajectories() {
        let run = || {
            let mut p = Tensor::<f32>::from_vec(&[4], vec![0.1, 0.2, -0.3, 0.4]).unwrap();
            let mut adam = Adam::new(AdamConfig { lr: 1e-2, ..Default::default() });
            for i in 0..100 {
                let g: Vec<f32> = p.data().iter().map(|&x| 2.0 * x + (i as f32 * 0.37).sin()).collect();
                p.set_grad(g).unwrap();
                adam.step(&mut [&mut p]).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn zero_learning_rate_is_bit_exact() {
        let mut p = Tensor::<f32>::from_vec(&[2], vec![-0.0, 1.5]).unwrap();
        p.set_grad(vec![1.0, -3.0]).unwrap();
        let mut adam = Adam::new(AdamConfig { lr: 0.0, ..Default::default() });
        for _ in 0..5 {
            adam.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.data()[0].to_bits(), (-0.0f32).to_bits());
        assert_eq!(p.data()[1], 1.5);
    }

    #[test]
    fn mismatched_lengths() {
        let mut p = [0.0f32; 2];
        assert!(adam_update(&mut p, &[1.0], &mut [0.0; 2], &mut [0.0; 2], &AdamConfig::default(), 1).is_err());
    }
}
