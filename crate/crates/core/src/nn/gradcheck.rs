use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
    pub tolerance: f64,
}

/// Compares the analytic gradient of `loss_and_grad` against central finite
/// differences of its loss value.
///
/// `loss_and_grad` must be pure and deterministic; it returns the loss and
/// the full analytic gradient at the given parameter vector. Differences are
/// taken with step 1e-4 on 64-bit reals.
pub fn finite_diff_check<F>(
    loss_and_grad: F,
    params: &[f64],
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let step = 1e-4;
    let (loss0, analytic) = loss_and_grad(params);
    if !loss0.is_finite() {
        return Err(Error::fault("non-finite loss at the evaluation point"));
    }
    if analytic.len() != params.len() {
        return Err(Error::usage(format!(
            "analytic gradient length {} does not match parameter count {}",
            analytic.len(),
            params.len()
        )));
    }

    let mut work = params.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = 0;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let (plus, _) = loss_and_grad(&work);
        work[i] = orig - step;
        let (minus, _) = loss_and_grad(&work);
        work[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::fault(format!(
                "non-finite loss while perturbing parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }

    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst_index: worst,
        passed: max_rel < tolerance,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_matches_analytic() {
        // loss = ||p||^2, grad = 2p
        let f = |p: &[f64]| {
            let loss: f64 = p.iter().map(|v| v * v).sum();
            (loss, p.iter().map(|v| 2.0 * v).collect())
        };
        let report = finite_diff_check(f, &[0.5, -1.5, 2.0], 1e-6).unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn linear_loss_is_exact_up_to_rounding() {
        let coeffs = [3.0, -2.0, 0.25];
        let f = move |p: &[f64]| {
            let loss: f64 = p.iter().zip(&coeffs).map(|(x, c)| c * x).sum();
            (loss, coeffs.to_vec())
        };
        let report = finite_diff_check(f, &[1.0, 2.0, -0.5], 1e-8).unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |p: &[f64]| {
            let loss: f64 = p.iter().map(|v| v * v).sum();
            (loss, p.to_vec()) // missing the factor 2
        };
        let report = finite_diff_check(f, &[1.0, 2.0], 1e-4).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn non_finite_loss_fails_with_fault() {
        let f = |_: &[f64]| (f64::NAN, vec![0.0]);
        assert!(matches!(
            finite_diff_check(f, &[1.0], 1e-4),
            Err(crate::error::Error::Fault(_))
        ));
    }
}
