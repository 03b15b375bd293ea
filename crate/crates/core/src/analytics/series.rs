//! Gradient task spaces tracked across pretraining checkpoints.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::TaskSuite;
use crate::model::LmCheckpoint;
use crate::probing::{gradient_probe, GradientProbe};

use super::{
    cosine_space, jaccard_space, phenomenon_hypothesis, space_correlation, within_phenomenon_stats, AnalyticsError,
    TaskSpace,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub epoch: usize,
    pub step: u64,
    /// Mean |θ₀| over tasks; excluded tasks count as empty.
    pub mean_subspace_size: f64,
    pub within_j: Option<f64>,
    pub across_j: Option<f64>,
    pub within_cs: Option<f64>,
    pub across_cs: Option<f64>,
    pub r_cs_phenomenon: Option<f64>,
    /// r(GTS_CS at this checkpoint, GTS_CS at the final one).
    pub stability: Option<f64>,
}

/// One record per probe, in the given order. The last probe is the
/// stability reference; undefined correlations are `None`.
pub fn series_from_probes(probes: &[GradientProbe], suite: &TaskSuite) -> Result<Vec<SeriesRecord>, AnalyticsError> {
    let last = probes.last().ok_or(AnalyticsError::EmptySeries)?;
    let hypothesis = phenomenon_hypothesis(suite).to_space();
    let spaces = |p: &GradientProbe| -> Result<(TaskSpace, TaskSpace), AnalyticsError> {
        Ok((jaccard_space(&p.tasks)?, cosine_space(&p.tasks, false)?))
    };
    let (_, final_cs) = spaces(last)?;
    let mut out = Vec::with_capacity(probes.len());
    for (k, p) in probes.iter().enumerate() {
        let (j, cs) = spaces(p)?;
        let sj = within_phenomenon_stats(&j, suite)?;
        let scs = within_phenomenon_stats(&cs, suite)?;
        let stability = if k + 1 == probes.len() {
            Some(1.0)
        } else {
            space_correlation(&cs, &final_cs).ok()
        };
        out.push(SeriesRecord {
            epoch: p.epoch,
            step: p.step,
            mean_subspace_size: p.tasks.iter().map(|t| t.subspace_size as f64).sum::<f64>() / p.tasks.len() as f64,
            within_j: sj.within_mean,
            across_j: sj.across_mean,
            within_cs: scs.within_mean,
            across_cs: scs.across_mean,
            r_cs_phenomenon: space_correlation(&cs, &hypothesis).ok(),
            stability,
        });
    }
    Ok(out)
}

/// Gradient-probes every checkpoint (no tuning) and builds the series.
pub fn checkpoint_series(
    ckpts: &[LmCheckpoint<f64>],
    suite: &TaskSuite,
    epsilon: f64,
) -> Result<Vec<SeriesRecord>, AnalyticsError> {
    let first = ckpts.first().ok_or(AnalyticsError::EmptySeries)?;
    for (index, c) in ckpts.iter().enumerate() {
        if c.config() != first.config() {
            return Err(AnalyticsError::ArchitectureMismatch {
                index,
                expected: Box::new(first.config().clone()),
                found: Box::new(c.config().clone()),
            });
        }
    }
    let probes = ckpts
        .iter()
        .map(|c| gradient_probe(c, suite, epsilon))
        .collect::<Result<Vec<_>, _>>()?;
    series_from_probes(&probes, suite)
}

pub fn series_csv(records: &[SeriesRecord]) -> String {
    let mut s = String::from(
        "epoch,step,mean_subspace_size,within_j,across_j,within_cs,across_cs,r_cs_phenomenon,stability\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.step,
            r.mean_subspace_size,
            opt(r.within_j),
            opt(r.across_j),
            opt(r.within_cs),
            opt(r.across_cs),
            opt(r.r_cs_phenomenon),
            opt(r.stability)
        );
    }
    s
}
