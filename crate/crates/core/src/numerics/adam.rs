use serde::{Deserialize, Serialize};

use super::ParamTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// One bias-corrected Adam update. `step` counts from 1.
///
/// Gradients are left untouched; the caller zeroes them.
pub fn adam_step(params: &mut [&mut ParamTensor], cfg: &AdamConfig, step: u64) {
    assert!(step >= 1, "adam step counts from 1");
    let t = step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for p in params.iter_mut() {
        let ParamTensor {
            value,
            grad,
            moment1,
            moment2,
        } = &mut **p;
        let it = value.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(
            moment1
                .as_mut_slice()
                .iter_mut()
                .zip(moment2.as_mut_slice()),
        );
        for ((v, &g), (m, s)) in it {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *s = cfg.beta2 * *s + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let s_hat = *s / c2;
            *v -= cfg.lr * m_hat / (s_hat.sqrt() + cfg.eps);
        }
    }
}
