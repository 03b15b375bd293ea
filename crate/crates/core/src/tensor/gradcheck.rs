use super::{Result, TensorError};
use crate::scalar::Scalar;

/// Compares an analytic gradient against central differences.
///
/// For each coordinate `i` in `coords`, evaluates `f` at `theta ± h e_i`
/// and returns the largest `|analytic_i - numeric_i| / (|analytic_i| + 1e-12)`.
pub fn finite_diff_check<S, F>(mut f: F, theta: &[S], analytic: &[S], coords: &[usize], h: S) -> Result<S>
where
    S: Scalar,
    F: FnMut(&[S]) -> Result<S>,
{
    if h <= S::zero() || !h.is_finite() {
        return Err(TensorError::NonPositiveStep);
    }
    if theta.len() != analytic.len() {
        return Err(TensorError::ShapeMismatch {
            op: "finite_diff_check",
            lhs: vec![theta.len()],
            rhs: vec![analytic.len()],
        });
    }
    let floor = S::of(1e-12);
    let two = S::of(2.0);
    let mut point = theta.to_vec();
    let mut worst = S::zero();
    for &i in coords {
        if i >= theta.len() {
            return Err(TensorError::IndexOutOfRange {
                op: "finite_diff_check",
                index: i,
                bound: theta.len(),
            });
        }
        point[i] = theta[i] + h;
        let up = f(&point)?;
        point[i] = theta[i] - h;
        let down = f(&point)?;
        point[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(TensorError::NonFinite("finite_diff_check"));
        }
        let numeric = (up - down) / (two * h);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err = finite_diff_check(|t: &[f64]| Ok(t[0] * t[0]), &[3.0], &[6.0], &[0], 1e-4).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_is_exact_to_rounding() {
        let f = |t: &[f64]| Ok(2.0 * t[0] - 0.5 * t[1] + 1.0);
        let err = finite_diff_check(f, &[0.3, -1.2], &[2.0, -0.5], &[0, 1], 1e-4).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn exponential_at_one() {
        let e = std::f64::consts::E;
        let err = finite_diff_check(|t: &[f64]| Ok(t[0].exp()), &[1.0], &[e], &[0], 1e-4).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let f = |t: &[f64]| Ok(t[0]);
        assert_eq!(
            finite_diff_check(f, &[1.0], &[1.0], &[0], 0.0).unwrap_err(),
            TensorError::NonPositiveStep
        );
        let g = |t: &[f64]| Ok(t[0].ln());
        assert_eq!(
            finite_diff_check(g, &[-1.0], &[1.0], &[0], 1e-4).unwrap_err(),
            TensorError::NonFinite("finite_diff_check")
        );
    }
}
