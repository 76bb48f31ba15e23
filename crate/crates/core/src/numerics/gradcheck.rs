use super::HasParams;

/// Location of a scalar inside a parameter set: (tensor index, flat entry index).
pub type ParamIndex = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Entry where `max_rel_error` was observed.
    pub worst: Option<ParamIndex>,
    /// Largest `|analytic − numeric|` among entries at or above `tol`;
    /// tells round-off on vanishing gradients apart from real mismatches.
    pub max_abs_error_over_tol: f64,
    pub checked: usize,
    /// First entry whose probe produced a non-finite loss.
    pub non_finite_at: Option<ParamIndex>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite_at.is_none() && self.max_rel_error < self.tol
    }
}

/// `|a − n| / max(1e−8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the gradients currently stored in `model` against central
/// differences of `loss`.
///
/// `loss` must be a pure function of the parameter values; each entry is
/// perturbed by ±`h` in turn and restored afterwards.
pub fn grad_check<M: HasParams>(
    model: &mut M,
    mut loss: impl FnMut(&M) -> f64,
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let shapes: Vec<usize> = model.params().iter().map(|p| p.value.len()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        max_abs_error_over_tol: 0.0,
        checked: 0,
        non_finite_at: None,
        tol,
    };
    for (t, &len) in shapes.iter().enumerate() {
        for e in 0..len {
            let (orig, analytic) = {
                let p = &model.params()[t];
                (p.value.as_slice()[e], p.grad.as_slice()[e])
            };
            model.params_mut()[t].value.as_mut_slice()[e] = orig + h;
            let plus = loss(model);
            model.params_mut()[t].value.as_mut_slice()[e] = orig - h;
            let minus = loss(model);
            model.params_mut()[t].value.as_mut_slice()[e] = orig;
            report.checked += 1;
            if !plus.is_finite() || !minus.is_finite() {
                report.non_finite_at.get_or_insert((t, e));
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic, numeric);
            if err >= tol {
                report.max_abs_error_over_tol = report
                    .max_abs_error_over_tol
                    .max((analytic - numeric).abs());
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((t, e));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, ParamTensor};

    #[test]
    fn quadratic() {
        let mut theta = ParamTensor::new(Matrix::row_vector(vec![3.0]));
        theta.grad.as_mut_slice()[0] = 6.0;
        let report = grad_check(&mut theta, |p| p.value.get(0, 0).powi(2), 1e-5, 1e-6);
        assert!(report.passed(), "{report:?}");
        assert_eq!(theta.value.get(0, 0), 3.0);
    }

    #[test]
    fn constant_function() {
        let mut p = vec![ParamTensor::zeros(2, 3), ParamTensor::zeros(1, 2)];
        let report = grad_check(&mut p, |_| 4.2, 1e-5, 1e-6);
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.checked, 8);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut theta = ParamTensor::new(Matrix::row_vector(vec![3.0]));
        theta.grad.as_mut_slice()[0] = 5.0;
        let report = grad_check(&mut theta, |p| p.value.get(0, 0).powi(2), 1e-5, 1e-4);
        assert!(!report.passed());
        assert_eq!(report.worst, Some((0, 0)));
    }

    #[test]
    fn non_finite_probe_reported() {
        let mut p = vec![ParamTensor::zeros(1, 1), ParamTensor::zeros(1, 2)];
        let report = grad_check(
            &mut p,
            |p| {
                if p[1].value.get(0, 1) > 0.0 {
                    f64::NAN
                } else {
                    0.0
                }
            },
            1e-5,
            1e-4,
        );
        assert_eq!(report.non_finite_at, Some((1, 1)));
        assert!(!report.passed());
    }
}
