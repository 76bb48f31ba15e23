use super::{Matrix, RngState};

/// A trainable tensor together with its gradient and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub value: Matrix,
    pub grad: Matrix,
    pub moment1: Matrix,
    pub moment2: Matrix,
}

impl ParamTensor {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        ParamTensor {
            value,
            grad: Matrix::zeros(r, c),
            moment1: Matrix::zeros(r, c),
            moment2: Matrix::zeros(r, c),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Matrix::zeros(rows, cols))
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut RngState) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.uniform_in(-limit, limit))
            .collect();
        Self::new(Matrix::from_vec(fan_in, fan_out, data).expect("length matches"))
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Replaces the value, resetting gradient and optimizer state.
    pub fn set_value(&mut self, value: Matrix) {
        *self = Self::new(value);
    }
}

/// Anything that owns a fixed, ordered set of parameter tensors.
pub trait HasParams {
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grads(&mut self) {
        self.params_mut()
            .into_iter()
            .for_each(ParamTensor::zero_grad);
    }

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

impl HasParams for ParamTensor {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![self]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![self]
    }
}

impl HasParams for Vec<ParamTensor> {
    fn params(&self) -> Vec<&ParamTensor> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.iter_mut().collect()
    }
}
