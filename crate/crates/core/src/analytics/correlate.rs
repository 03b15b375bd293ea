//! Pearson correlation between spaces with a task-label permutation null.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::substream;

use super::{AnalyticsError, TaskSpace};

pub const DEFAULT_PERMUTATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    /// `|r|`, reported when either space is a distance.
    pub abs_r: Option<f64>,
    /// Two-sided: share of permutations with `|r_π| ≥ |r|`, counting the
    /// observed labelling once.
    pub p_perm: f64,
    /// 95th percentile (nearest rank) of the signed null distribution.
    pub null_q95: f64,
    pub n_pairs: usize,
    /// Permutations that produced a defined correlation.
    pub n_permutations: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalyticsError> {
    let n = x.len().min(y.len());
    if n < 3 {
        return Err(AnalyticsError::TooFewPairs(n));
    }
    let (x, y) = (&x[..n], &y[..n]);
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(AnalyticsError::ConstantEntries("first"));
    }
    if syy == 0.0 {
        return Err(AnalyticsError::ConstantEntries("second"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise-complete cells: the upper off-diagonal triangle when both
/// spaces are symmetric, every off-diagonal cell otherwise. `order`
/// relabels the tasks of `x`.
fn paired_cells(x: &TaskSpace, y: &TaskSpace, order: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let symmetric = x.metric.is_symmetric() && y.metric.is_symmetric();
    let n = x.len();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..n {
            if i == j || (symmetric && j < i) {
                continue;
            }
            if let (Some(u), Some(v)) = (x.get(order[i], order[j]), y.get(i, j)) {
                a.push(u);
                b.push(v);
            }
        }
    }
    (a, b)
}

/// Pearson r over off-diagonal cells, without a null.
pub fn space_correlation(x: &TaskSpace, y: &TaskSpace) -> Result<f64, AnalyticsError> {
    x.check_order(y)?;
    let identity: Vec<usize> = (0..x.len()).collect();
    let (a, b) = paired_cells(x, y, &identity);
    pearson(&a, &b)
}

/// Pearson r plus a null from `n_permutations` relabellings of the tasks of
/// `x` (rows and columns together), drawn from the `permutation` substream
/// of `seed`.
pub fn correlate_spaces(
    x: &TaskSpace,
    y: &TaskSpace,
    n_permutations: usize,
    seed: u64,
) -> Result<CorrelationResult, AnalyticsError> {
    x.check_order(y)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    let (a, b) = paired_cells(x, y, &order);
    let r = pearson(&a, &b)?;
    let mut rng = substream(seed, "permutation");
    let mut null = Vec::with_capacity(n_permutations);
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        let (a, b) = paired_cells(x, y, &order);
        if let Ok(v) = pearson(&a, &b) {
            null.push(v);
        }
    }
    let extreme = null.iter().filter(|v| v.abs() >= r.abs() - 1e-12).count();
    null.sort_by(f64::total_cmp);
    let q95 = match null.len() {
        0 => f64::NAN,
        m => null[((0.95 * m as f64).ceil() as usize).clamp(1, m) - 1],
    };
    Ok(CorrelationResult {
        r,
        abs_r: (x.metric.is_distance() || y.metric.is_distance()).then_some(r.abs()),
        p_perm: (1 + extreme) as f64 / (1 + null.len()) as f64,
        null_q95: q95,
        n_pairs: a.len(),
        n_permutations: null.len(),
    })
}
