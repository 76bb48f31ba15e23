//! Dense linear algebra, layer primitives with manual backward passes,
//! Adam, and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod matrix;
pub mod ops;
mod param;
mod rng;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamIndex};
pub use matrix::Matrix;
pub use ops::{
    bce_loss, bce_with_logit, bce_with_logit_grad, dropout, dropout_mask, layer_norm_backward,
    layer_norm_forward, layer_normalize, linear_backward, linear_forward, relu, relu_backward,
    sigmoid_stable, LayerNormCache, PROB_EPS, VARIANCE_FLOOR,
};
pub use param::{HasParams, ParamTensor};
pub use rng::{RngSnapshot, RngState};
