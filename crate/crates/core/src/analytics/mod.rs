//! Task spaces built from gradient probing, hypothesis spaces, vocabulary
//! controls, correlations between spaces and checkpoint-series trends.

mod controls;
mod correlate;
mod series;

pub use controls::{
    frequency_order, nvo_control, nvo_from_supports, wasserstein_1d, wasserstein_control, wasserstein_from_histograms,
    wasserstein_similarity,
};
pub use correlate::{correlate_spaces, pearson, space_correlation, CorrelationResult, DEFAULT_PERMUTATIONS};
pub use series::{checkpoint_series, series_csv, series_from_probes, SeriesRecord};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaskSuite;
use crate::ftgd::{FtgdError, SubspaceDelta};
use crate::model::LmConfig;
use crate::probing::{ProbeError, ProbedTask};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("task orderings differ: {left:?} vs {right:?}")]
    OrderMismatch { left: Vec<String>, right: Vec<String> },
    #[error("need at least {need} tasks, got {got}")]
    TooFewTasks { need: usize, got: usize },
    #[error("only {0} valid entry pairs, at least 3 are needed")]
    TooFewPairs(usize),
    #[error("correlation undefined: the {0} entries are constant")]
    ConstantEntries(&'static str),
    #[error("space is not square: {rows} rows for {tasks} tasks")]
    NotSquare { rows: usize, tasks: usize },
    #[error("checkpoint {index} has config {found:?}, expected {expected:?}")]
    ArchitectureMismatch {
        index: usize,
        expected: Box<LmConfig>,
        found: Box<LmConfig>,
    },
    #[error("empty checkpoint series")]
    EmptySeries,
    #[error("differentials disagree on parameter count: {0} vs {1}")]
    ParamCountMismatch(usize, usize),
    #[error("malformed space file: {0}")]
    Parse(String),
    #[error(transparent)]
    Ftgd(#[from] FtgdError),
    #[error(transparent)]
    Probe(#[from] Box<ProbeError>),
}

impl From<ProbeError> for AnalyticsError {
    fn from(e: ProbeError) -> Self {
        AnalyticsError::Probe(Box::new(e))
    }
}

/// What the cells of a space measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Normalized transfer after tuning (TTS).
    Transfer,
    /// Jaccard similarity of subspaces.
    Jaccard,
    /// Cosine of gradient differentials on shared parameters.
    Cosine,
    /// Jaccard times cosine.
    JaccardCosine,
    /// Binary hypothesis.
    Hypothesis,
    /// Normalized vocabulary overlap.
    VocabOverlap,
    /// 1-Wasserstein distance of vocabulary histograms.
    Wasserstein,
    /// `1 - WD`, for display next to the similarity spaces.
    WassersteinSimilarity,
}

impl Metric {
    pub fn tag(self) -> &'static str {
        match self {
            Metric::Transfer => "tts",
            Metric::Jaccard => "gts_j",
            Metric::Cosine => "gts_cs",
            Metric::JaccardCosine => "gts_jcs",
            Metric::Hypothesis => "phenomenon",
            Metric::VocabOverlap => "nvo",
            Metric::Wasserstein => "wd",
            Metric::WassersteinSimilarity => "one_minus_wd",
        }
    }

    pub fn is_symmetric(self) -> bool {
        self != Metric::Transfer
    }

    /// Cells can be negative, so heatmaps use a diverging scale.
    pub fn is_signed(self) -> bool {
        matches!(self, Metric::Transfer | Metric::Cosine | Metric::JaccardCosine)
    }

    pub fn is_distance(self) -> bool {
        self == Metric::Wasserstein
    }
}

/// Square matrix over an ordered task list; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpace {
    pub tasks: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub metric: Metric,
    /// Where the cells came from (checkpoint hash, suite hash, ...).
    pub source: String,
}

impl TaskSpace {
    pub fn new(
        tasks: Vec<String>,
        values: Vec<Vec<Option<f64>>>,
        metric: Metric,
        source: impl Into<String>,
    ) -> Result<Self, AnalyticsError> {
        let n = tasks.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(AnalyticsError::NotSquare {
                rows: values.len(),
                tasks: n,
            });
        }
        Ok(Self {
            tasks,
            values,
            metric,
            source: source.into(),
        })
    }

    fn from_fn(
        tasks: Vec<String>,
        metric: Metric,
        source: impl Into<String>,
        mut cell: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Self {
        let n = tasks.len();
        let values = (0..n).map(|i| (0..n).map(|j| cell(i, j)).collect()).collect();
        Self {
            tasks,
            values,
            metric,
            source: source.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i][j]
    }

    pub fn check_order(&self, other: &TaskSpace) -> Result<(), AnalyticsError> {
        check_tasks(&self.tasks, &other.tasks)
    }

    /// Reorders tasks so that new task `k` is old task `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self::from_fn(
            order.iter().map(|&k| self.tasks[k].clone()).collect(),
            self.metric,
            self.source.clone(),
            |i, j| self.values[order[i]][order[j]],
        )
    }

    /// CSV with a header row and a leading column of task ids; missing cells
    /// are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task");
        for t in &self.tasks {
            out.push(',');
            out.push_str(t);
        }
        out.push('\n');
        for (t, row) in self.tasks.iter().zip(&self.values) {
            out.push_str(t);
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    write!(out, "{v}").expect("write to string");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, metric: Metric, source: impl Into<String>) -> Result<Self, AnalyticsError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| AnalyticsError::Parse("empty file".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("task") {
            return Err(AnalyticsError::Parse("header must start with `task`".into()));
        }
        let tasks: Vec<String> = cols.map(str::to_string).collect();
        let mut values = Vec::with_capacity(tasks.len());
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let id = cells.next().unwrap_or_default();
            if tasks.get(i).map(String::as_str) != Some(id) {
                return Err(AnalyticsError::Parse(format!("row {} is `{id}`, header disagrees", i + 1)));
            }
            let row = cells
                .map(|c| match c {
                    "" => Ok(None),
                    c => c
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|_| AnalyticsError::Parse(format!("bad cell `{c}` in row `{id}`"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            values.push(row);
        }
        Self::new(tasks, values, metric, source)
    }
}

fn check_tasks(left: &[String], right: &[String]) -> Result<(), AnalyticsError> {
    if left == right {
        Ok(())
    } else {
        Err(AnalyticsError::OrderMismatch {
            left: left.to_vec(),
            right: right.to_vec(),
        })
    }
}

/// Binary space encoding a grouping hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpace {
    pub name: String,
    pub tasks: Vec<String>,
    pub values: Vec<Vec<bool>>,
}

impl HypothesisSpace {
    pub fn to_space(&self) -> TaskSpace {
        TaskSpace::from_fn(self.tasks.clone(), Metric::Hypothesis, self.name.clone(), |i, j| {
            Some(if self.values[i][j] { 1.0 } else { 0.0 })
        })
    }
}

/// 1 where two paradigms belong to the same phenomenon.
pub fn phenomenon_hypothesis(suite: &TaskSuite) -> HypothesisSpace {
    let ps = &suite.paradigms;
    HypothesisSpace {
        name: "phenomenon".into(),
        tasks: ps.iter().map(|p| p.id.clone()).collect(),
        values: ps
            .iter()
            .map(|a| ps.iter().map(|b| a.phenomenon == b.phenomenon).collect())
            .collect(),
    }
}

fn probe_source(probed: &[ProbedTask]) -> String {
    probed
        .iter()
        .find_map(|p| p.delta.as_ref().map(|d| d.checkpoint.clone()))
        .unwrap_or_default()
}

fn check_params(probed: &[ProbedTask]) -> Result<(), AnalyticsError> {
    let mut sizes = probed.iter().filter_map(|p| p.delta.as_ref().map(|d| d.n_params));
    if let Some(first) = sizes.next() {
        if let Some(other) = sizes.find(|&n| n != first) {
            return Err(AnalyticsError::ParamCountMismatch(first, other));
        }
    }
    Ok(())
}

/// Sizes of the intersection and union of two ascending index lists.
fn overlap(a: &[usize], b: &[usize]) -> (usize, usize) {
    let (mut i, mut j, mut both) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                both += 1;
                i += 1;
                j += 1;
            }
        }
    }
    (both, a.len() + b.len() - both)
}

/// `|θ₀ᴬ ∩ θ₀ᴮ| / |θ₀ᴬ ∪ θ₀ᴮ|`. Tasks excluded by the probe count as empty
/// subspaces; two empty subspaces give a missing cell.
pub fn jaccard_space(probed: &[ProbedTask]) -> Result<TaskSpace, AnalyticsError> {
    if probed.len() < 2 {
        return Err(AnalyticsError::TooFewTasks {
            need: 2,
            got: probed.len(),
        });
    }
    check_params(probed)?;
    let empty: Vec<usize> = Vec::new();
    let idx = |k: usize| probed[k].delta.as_ref().map_or(&empty, |d| &d.indices);
    let tasks = probed.iter().map(|p| p.task.clone()).collect();
    Ok(TaskSpace::from_fn(tasks, Metric::Jaccard, probe_source(probed), |i, j| {
        let (both, either) = overlap(idx(i), idx(j));
        (either > 0).then(|| if i == j { 1.0 } else { both as f64 / either as f64 })
    }))
}

/// Cosine of two sparse differentials. The restricted form uses only the
/// shared indices; the union form zero-fills each vector over both
/// subspaces, which leaves the dot product unchanged but keeps the full
/// norms.
fn sparse_cosine(a: &SubspaceDelta, b: &SubspaceDelta, union: bool) -> Option<f64> {
    let (mut i, mut j, mut shared) = (0, 0, 0);
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    while i < a.indices.len() && j < b.indices.len() {
        match a.indices[i].cmp(&b.indices[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let (x, y) = (a.values[i], b.values[j]);
                dot += x * y;
                na += x * x;
                nb += y * y;
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if union {
        na = a.values.iter().map(|v| v * v).sum();
        nb = b.values.iter().map(|v| v * v).sum();
    } else if shared == 0 {
        // Disjoint subspaces do not interact.
        return Some(0.0);
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine of the step-0 differentials on `θ₀ᴬ ∩ θ₀ᴮ` (or on the union with
/// zero-fill when `union` is set). Disjoint subspaces give 0; a zero-norm
/// restricted vector gives 0 with a warning; excluded tasks give missing
/// rows and columns.
pub fn cosine_space(probed: &[ProbedTask], union: bool) -> Result<TaskSpace, AnalyticsError> {
    if probed.len() < 2 {
        return Err(AnalyticsError::TooFewTasks {
            need: 2,
            got: probed.len(),
        });
    }
    check_params(probed)?;
    let tasks = probed.iter().map(|p| p.task.clone()).collect();
    Ok(TaskSpace::from_fn(tasks, Metric::Cosine, probe_source(probed), |i, j| {
        let (a, b) = (probed[i].delta.as_ref()?, probed[j].delta.as_ref()?);
        Some(sparse_cosine(a, b, union).unwrap_or_else(|| {
            log::warn!("zero-norm restricted differential for ({}, {}); cosine set to 0", a.paradigm, b.paradigm);
            0.0
        }))
    }))
}

/// Elementwise `J × CS`.
pub fn weighted_space(j: &TaskSpace, c: &TaskSpace) -> Result<TaskSpace, AnalyticsError> {
    j.check_order(c)?;
    Ok(TaskSpace::from_fn(j.tasks.clone(), Metric::JaccardCosine, j.source.clone(), |a, b| {
        Some(j.get(a, b)? * c.get(a, b)?)
    }))
}

/// Per-phenomenon (mean, population std) of off-diagonal within cells, plus
/// global within and across means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenomenonStats {
    /// `None` for single-paradigm phenomena or when every cell is missing.
    pub per_phenomenon: Vec<(String, Option<(f64, f64)>)>,
    pub within_mean: Option<f64>,
    pub across_mean: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aggregates all ordered off-diagonal cells, so asymmetric spaces count
/// both directions and symmetric spaces are unaffected.
pub fn within_phenomenon_stats(space: &TaskSpace, suite: &TaskSuite) -> Result<PhenomenonStats, AnalyticsError> {
    let ids: Vec<String> = suite.paradigm_ids().into_iter().map(String::from).collect();
    check_tasks(&space.tasks, &ids)?;
    let groups = suite.phenomena();
    let mut group_of = vec![0; ids.len()];
    for (g, (_, members)) in groups.iter().enumerate() {
        for &m in members {
            group_of[m] = g;
        }
    }
    let (mut within, mut across) = (Vec::new(), Vec::new());
    let mut per: Vec<Vec<f64>> = vec![Vec::new(); groups.len()];
    for i in 0..ids.len() {
        for j in 0..ids.len() {
            let Some(v) = space.get(i, j).filter(|_| i != j) else {
                continue;
            };
            if group_of[i] == group_of[j] {
                within.push(v);
                per[group_of[i]].push(v);
            } else {
                across.push(v);
            }
        }
    }
    let per_phenomenon = groups
        .iter()
        .zip(&per)
        .map(|((name, members), cells)| {
            let stats = (members.len() > 1).then(|| mean(cells)).flatten().map(|m| {
                let var = cells.iter().map(|v| (v - m).powi(2)).sum::<f64>() / cells.len() as f64;
                (m, var.sqrt())
            });
            (name.to_string(), stats)
        })
        .collect();
    Ok(PhenomenonStats {
        per_phenomenon,
        within_mean: mean(&within),
        across_mean: mean(&across),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_suite, SuiteSpec};

    pub(crate) fn probed(task: &str, indices: &[usize], values: &[f64]) -> ProbedTask {
        ProbedTask {
            task: task.into(),
            subspace_size: indices.len(),
            delta: (!indices.is_empty()).then(|| SubspaceDelta {
                checkpoint: "ck".into(),
                paradigm: task.into(),
                epsilon: 1e-3,
                n_params: 10,
                total_mass: values.iter().map(|v| v.abs()).sum(),
                indices: indices.to_vec(),
                values: values.to_vec(),
            }),
            error: None,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn jaccard_hand_cases() {
        let p = [
            probed("a", &[1, 2, 3], &[1.0; 3]),
            probed("b", &[2, 3, 4], &[1.0; 3]),
            probed("c", &[1, 2, 3], &[1.0; 3]),
            probed("d", &[7, 8], &[1.0; 2]),
            probed("e", &[], &[]),
        ];
        let j = jaccard_space(&p).unwrap();
        assert!(rel(j.get(0, 1).unwrap(), 2.0 / 4.0) < 1e-12);
        assert_eq!(j.get(0, 2), Some(1.0));
        assert_eq!(j.get(0, 3), Some(0.0));
        assert_eq!(j.get(0, 4), Some(0.0));
        assert_eq!(j.get(4, 4), None);
        for i in 0..4 {
            assert_eq!(j.get(i, i), Some(1.0));
        }
    }

    #[test]
    fn cosine_hand_cases() {
        let p = [
            probed("a", &[0, 1], &[1.0, 0.0]),
            probed("b", &[0, 1], &[1.0, 1.0]),
            probed("c", &[0, 1], &[2.0, 0.0]),
            probed("d", &[0, 1], &[0.0, 3.0]),
            probed("e", &[5], &[1.0]),
        ];
        let c = cosine_space(&p, false).unwrap();
        assert!(rel(c.get(0, 1).unwrap(), 1.0 / 2f64.sqrt()) < 1e-12);
        assert!(rel(c.get(0, 2).unwrap(), 1.0) < 1e-12);
        assert_eq!(c.get(0, 3), Some(0.0));
        assert_eq!(c.get(0, 4), Some(0.0));
        assert_eq!(c.get(1, 0), c.get(0, 1));
    }

    #[test]
    fn cosine_restricts_to_the_intersection() {
        // Shared index 1 only: restricted vectors (2) and (3) are parallel.
        let p = [probed("a", &[0, 1], &[5.0, 2.0]), probed("b", &[1, 2], &[3.0, -4.0])];
        let restricted = cosine_space(&p, false).unwrap();
        assert!(rel(restricted.get(0, 1).unwrap(), 1.0) < 1e-12);
        let union = cosine_space(&p, true).unwrap();
        let want = 6.0 / (29f64.sqrt() * 5.0);
        assert!(rel(union.get(0, 1).unwrap(), want) < 1e-12);
    }

    #[test]
    fn zero_norm_restriction_gives_zero() {
        let p = [probed("a", &[0, 1], &[0.0, 2.0]), probed("b", &[0], &[1.0])];
        assert_eq!(cosine_space(&p, false).unwrap().get(0, 1), Some(0.0));
    }

    #[test]
    fn weighted_space_is_the_product() {
        let tasks = vec!["a".to_string(), "b".to_string()];
        let j = TaskSpace::new(tasks.clone(), vec![vec![Some(1.0), Some(0.5)]; 2], Metric::Jaccard, "").unwrap();
        let c = TaskSpace::new(
            tasks.clone(),
            vec![vec![Some(0.3), Some(0.8)], vec![Some(0.8), Some(0.0)]],
            Metric::Cosine,
            "",
        )
        .unwrap();
        let w = weighted_space(&j, &c).unwrap();
        assert!(rel(w.get(0, 1).unwrap(), 0.4) < 1e-12);
        assert_eq!(w.get(1, 1), Some(0.0));
        assert_eq!(w.get(0, 0), c.get(0, 0));
        let other = c.permuted(&[1, 0]);
        assert!(matches!(weighted_space(&j, &other), Err(AnalyticsError::OrderMismatch { .. })));
    }

    #[test]
    fn phenomenon_hypothesis_is_block_diagonal() {
        let suite = generate_suite(1, &SuiteSpec::default()).unwrap();
        let h = phenomenon_hypothesis(&suite);
        let blocks = suite.phenomena();
        for (_, a) in &blocks {
            for (_, b) in &blocks {
                for &i in a {
                    for &j in b {
                        assert_eq!(h.values[i][j], std::ptr::eq(a, b));
                    }
                }
            }
        }
        assert_eq!(h.to_space().get(0, 0), Some(1.0));
    }

    #[test]
    fn csv_round_trip_keeps_missing_cells() {
        let s = TaskSpace::new(
            vec!["a".into(), "b".into()],
            vec![vec![Some(1.0), None], vec![Some(-0.25), Some(0.1 + 0.2)]],
            Metric::Transfer,
            "x",
        )
        .unwrap();
        let text = s.to_csv();
        assert_eq!(text, "task,a,b\na,1,\nb,-0.25,0.30000000000000004\n");
        assert_eq!(TaskSpace::from_csv(&text, Metric::Transfer, "x").unwrap(), s);
        assert!(TaskSpace::from_csv("task,a\nb,1\n", Metric::Transfer, "").is_err());
    }

    fn stats_suite() -> TaskSuite {
        generate_suite(
            1,
            &SuiteSpec {
                pairs_per: 20,
                ..SuiteSpec::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn within_and_across_means() {
        let suite = stats_suite();
        let ids: Vec<String> = suite.paradigm_ids().into_iter().map(String::from).collect();
        let ph: Vec<&str> = suite.paradigms.iter().map(|p| p.phenomenon.as_str()).collect();
        let block = TaskSpace::from_fn(ids.clone(), Metric::Cosine, "", |i, j| {
            Some(if i == j { 1.0 } else if ph[i] == ph[j] { 0.8 } else { 0.1 })
        });
        let s = within_phenomenon_stats(&block, &suite).unwrap();
        assert!(rel(s.within_mean.unwrap(), 0.8) < 1e-12);
        assert!(rel(s.across_mean.unwrap(), 0.1) < 1e-12);
        let flat = TaskSpace::from_fn(ids, Metric::Cosine, "", |_, _| Some(0.3));
        let s = within_phenomenon_stats(&flat, &suite).unwrap();
        assert!(rel(s.within_mean.unwrap(), s.across_mean.unwrap()) < 1e-12);
    }

    #[test]
    fn two_cell_group_uses_population_std() {
        let suite = stats_suite();
        let ids: Vec<String> = suite.paradigm_ids().into_iter().map(String::from).collect();
        // The first two-paradigm phenomenon gets cells 0.2 and 0.6.
        let (name, members) = suite.phenomena().into_iter().find(|(_, m)| m.len() == 2).unwrap();
        let (a, b) = (members[0], members[1]);
        let space = TaskSpace::from_fn(ids, Metric::Transfer, "", |i, j| match (i, j) {
            _ if (i, j) == (a, b) => Some(0.2),
            _ if (i, j) == (b, a) => Some(0.6),
            _ => Some(0.0),
        });
        let s = within_phenomenon_stats(&space, &suite).unwrap();
        let (m, sd) = s.per_phenomenon.iter().find(|(n, _)| n == name).unwrap().1.unwrap();
        assert!(rel(m, 0.4) < 1e-12);
        assert!(rel(sd, 0.2) < 1e-12);
    }

    #[test]
    fn single_paradigm_phenomenon_is_missing() {
        let mut suite = stats_suite();
        suite.paradigms.truncate(4);
        let ids: Vec<String> = suite.paradigm_ids().into_iter().map(String::from).collect();
        let space = TaskSpace::from_fn(ids, Metric::Cosine, "", |_, _| Some(0.5));
        let s = within_phenomenon_stats(&space, &suite).unwrap();
        let last = s.per_phenomenon.last().unwrap();
        assert_eq!(suite.phenomena().last().unwrap().1.len(), 1);
        assert_eq!(last.1, None);
    }
}
