use serde::Serialize;

use super::{Module, NnError};
use crate::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many evenly spaced elements per parameter.
    pub max_elements_per_param: Option<usize>,
    /// Elements whose analytic and numeric gradients are both below
    /// `zero_floor * max(1, |loss|)` count as agreeing zeros. With step
    /// 1e-5 the central difference carries roundoff near 1e-10 * |loss|,
    /// which is 1e-3 relative error at 1e-7.
    pub zero_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_elements_per_param: None,
            zero_floor: 1e-7,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn set_element<T: Scalar, M: Module<T>>(target: &mut M, param: usize, elem: usize, value: T) {
    let mut idx = 0;
    target.visit_params_mut(&mut |p| {
        if idx == param {
            p.value.data_mut()[elem] = value;
        }
        idx += 1;
    });
}

/// Compares analytic gradients against central differences.
///
/// `loss_fn(target, with_grad)` must return the scalar loss and, when
/// `with_grad` is set, accumulate parameter gradients into the (zeroed)
/// parameters of `target`.
pub fn finite_difference_check<T, M, F>(
    target: &mut M,
    mut loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NnError>
where
    T: Scalar,
    M: Module<T>,
    F: FnMut(&mut M, bool) -> Result<T, NnError>,
{
    target.zero_grad();
    let first = loss_fn(target, true)?.to_f64_lossy();
    let mut analytic: Vec<(String, Vec<f64>, Vec<T>)> = Vec::new();
    target.visit_params(&mut |p| {
        analytic.push((
            p.name.clone(),
            p.grad.data().iter().map(|g| g.to_f64_lossy()).collect(),
            p.value.data().to_vec(),
        ));
    });
    target.zero_grad();
    let second = loss_fn(target, false)?.to_f64_lossy();
    if first.to_bits() != second.to_bits() {
        return Err(NnError::NonDeterministicLoss { first, second });
    }

    let zero = opts.zero_floor * first.abs().max(1.0);
    let h = T::lit(opts.step);
    let two_h = (h + h).to_f64_lossy();
    let mut params = Vec::with_capacity(analytic.len());
    for (pi, (name, grads, values)) in analytic.iter().enumerate() {
        let n = values.len();
        let stride = match opts.max_elements_per_param {
            Some(cap) if cap > 0 && n > cap => n.div_ceil(cap),
            _ => 1,
        };
        let mut check = ParamCheck {
            name: name.clone(),
            checked: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for elem in (0..n).step_by(stride) {
            let orig = values[elem];
            set_element(target, pi, elem, orig + h);
            let plus = loss_fn(target, false)?.to_f64_lossy();
            set_element(target, pi, elem, orig - h);
            let minus = loss_fn(target, false)?.to_f64_lossy();
            set_element(target, pi, elem, orig);
            let numeric = (plus - minus) / two_h;
            let a = grads[elem];
            check.checked += 1;
            check.max_abs_err = check.max_abs_err.max((a - numeric).abs());
            if a.abs() > zero || numeric.abs() > zero {
                check.max_rel_err = check.max_rel_err.max(relative_error(a, numeric));
            }
        }
        params.push(check);
    }
    target.zero_grad();
    let max_rel_err = params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_err,
        tolerance: opts.tolerance,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Parameter;
    use crate::Tensor;

    struct Quadratic {
        x: Parameter<f64>,
        grad_scale: f64,
    }

    impl Module<f64> for Quadratic {
        fn visit_params(&self, f: &mut dyn FnMut(&Parameter<f64>)) {
            f(&self.x);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
            f(&mut self.x);
        }
    }

    fn sum_of_squares(q: &mut Quadratic, with_grad: bool) -> Result<f64, NnError> {
        let loss = q.x.value.data().iter().map(|v| v * v).sum();
        if with_grad {
            let scale = q.grad_scale;
            for (g, &v) in q.x.grad.data_mut().iter_mut().zip(q.x.value.data()) {
                *g += 2.0 * v * scale;
            }
        }
        Ok(loss)
    }

    fn quadratic(scale: f64) -> Quadratic {
        Quadratic {
            x: Parameter::new(
                "x",
                Tensor::from_vec(&[5], vec![0.3, -1.2, 2.5, 0.05, -0.7]),
            ),
            grad_scale: scale,
        }
    }

    #[test]
    fn sum_of_squares_matches_closed_form() {
        let mut q = quadratic(1.0);
        let report = finite_difference_check(&mut q, sum_of_squares, &GradCheckOptions::default())
            .unwrap();
        assert!(report.max_rel_err <= 1e-8, "{}", report.max_rel_err);
        assert!(report.passed());
        assert_eq!(report.params[0].checked, 5);
    }

    #[test]
    fn scaled_analytic_gradient_is_detected() {
        let mut q = quadratic(1.01);
        let report = finite_difference_check(&mut q, sum_of_squares, &GradCheckOptions::default())
            .unwrap();
        assert!(!report.passed());
        assert!(report.max_rel_err > 1e-4);
    }

    #[test]
    fn nondeterministic_loss_is_reported() {
        let mut q = quadratic(1.0);
        let mut calls = 0.0;
        let err = finite_difference_check(
            &mut q,
            |q, g| {
                calls += 1.0;
                Ok(sum_of_squares(q, g)? + calls)
            },
            &GradCheckOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, NnError::NonDeterministicLoss { .. }));
    }
}
