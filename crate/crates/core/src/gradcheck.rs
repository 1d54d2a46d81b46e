//! Central finite-difference verification of analytic gradients.
//!
//! The harness perturbs one parameter at a time by ±step, re-evaluates the
//! loss, and compares (L(p+h) - L(p-h)) / 2h against the analytic gradient.
//! It stays deliberately independent of the layer implementations: callers
//! hand in an opaque loss function over a flat parameter vector.

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    /// Largest relative error across the checked indices.
    pub max_rel_error: f64,
    /// Index where the maximum occurred.
    pub worst_index: Option<usize>,
    /// Numeric and analytic gradient at the worst index.
    pub worst_pair: Option<(f64, f64)>,
    /// Number of parameters checked.
    pub checked: usize,
    pub tolerance: f64,
}

impl FiniteDiffReport {
    pub fn pass(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Relative discrepancy with an absolute floor so that near-zero pairs
/// compare absolutely instead of blowing up.
pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    let denom = numeric.abs().max(analytic.abs()).max(1e-6);
    (numeric - analytic).abs() / denom
}

/// Checks `analytic` against central differences of `loss` at `params`,
/// sweeping every index.
pub fn finite_diff_check<F>(
    loss: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> FiniteDiffReport
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize> = (0..params.len()).collect();
    finite_diff_check_at(loss, params, analytic, step, tolerance, &all)
}

/// Same as [`finite_diff_check`] restricted to a subset of indices, for
/// spot-checking large parameter vectors.
pub fn finite_diff_check_at<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
    indices: &[usize],
) -> FiniteDiffReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(
        params.len(),
        analytic.len(),
        "analytic gradient length must match params"
    );
    let mut scratch = params.to_vec();
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst_index: None,
        worst_pair: None,
        checked: 0,
        tolerance,
    };
    for &i in indices {
        let original = scratch[i];
        scratch[i] = original + step;
        let up = loss(&scratch);
        scratch[i] = original - step;
        let down = loss(&scratch);
        scratch[i] = original;
        let numeric = (up - down) / (2.0 * step);
        let rel = relative_error(numeric, analytic[i]);
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
            report.worst_pair = Some((numeric, analytic[i]));
        }
        report.checked += 1;
    }
    report
}
