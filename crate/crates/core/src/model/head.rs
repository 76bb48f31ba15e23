use crate::numerics::{HasParams, Matrix, ParamTensor, RngState};

/// Learned weighted distance between two latent vectors:
/// `Σₖ wₖ (aₖ − bₖ)² + bias`.
///
/// Weights are unconstrained, so the result is not a metric; only the
/// ordering it induces is used.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceHead {
    /// `1 × latent_dim`.
    pub weight: ParamTensor,
    /// `1 × 1`.
    pub bias: ParamTensor,
}

impl DistanceHead {
    pub fn new(latent_dim: usize, rng: &mut RngState) -> Self {
        let w = ParamTensor::glorot(latent_dim, 1, rng).value.into_vec();
        Self::from_values(w, 0.0)
    }

    pub fn from_values(weight: Vec<f64>, bias: f64) -> Self {
        DistanceHead {
            weight: ParamTensor::new(Matrix::row_vector(weight)),
            bias: ParamTensor::new(Matrix::row_vector(vec![bias])),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn weights(&self) -> &[f64] {
        self.weight.value.as_slice()
    }

    pub fn bias_value(&self) -> f64 {
        self.bias.value.get(0, 0)
    }

    #[inline]
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        weighted_distance(self, a, b)
    }

    /// `D(a, b) − D(a, c)`. The bias cancels exactly rather than through
    /// rounding.
    pub fn distance_difference(&self, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        weighted_sq(self.weights(), a, b) - weighted_sq(self.weights(), a, c)
    }
}

impl HasParams for DistanceHead {
    fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// # Panics
/// If the vectors or the head weights disagree in length.
pub fn weighted_distance(head: &DistanceHead, a: &[f64], b: &[f64]) -> f64 {
    let w = head.weights();
    weighted_sq(w, a, b) + head.bias_value()
}

fn weighted_sq(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    assert!(
        a.len() == w.len() && b.len() == w.len(),
        "latent dims differ: head {}, vectors {} and {}",
        w.len(),
        a.len(),
        b.len()
    );
    let mut acc = 0.0;
    for k in 0..w.len() {
        let diff = a[k] - b[k];
        acc += w[k] * diff * diff;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let head = DistanceHead::from_values(vec![0.3, -1.2], 0.75);
        assert_eq!(head.distance(&[1.0, 2.0], &[1.0, 2.0]), 0.75);

        let unit = DistanceHead::from_values(vec![1.0; 3], 0.0);
        assert_eq!(
            unit.distance(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0]),
            1.0 + 4.0 + 4.0
        );

        let head = DistanceHead::from_values(vec![2.0, 1.0], 0.5);
        assert_eq!(head.distance(&[1.0, 0.0], &[0.0, 2.0]), 6.5);
    }

    #[test]
    #[should_panic(expected = "latent dims differ")]
    fn mismatched_lengths_panic() {
        DistanceHead::from_values(vec![1.0; 2], 0.0).distance(&[1.0], &[1.0, 2.0]);
    }
}
