//! Vocabulary controls: normalized overlap of vocabulary supports and the
//! 1-Wasserstein distance of vocabulary histograms.

use crate::corpus::{vocab_distribution, TaskSuite};

use super::{Metric, TaskSpace};

fn ids(suite: &TaskSuite) -> Vec<String> {
    suite.paradigms.iter().map(|p| p.id.clone()).collect()
}

/// `|V_A ∩ V_B|` normalized by the largest overlap between two distinct
/// tasks. The diagonal is 1 by convention. If no two tasks share a token
/// every cell is missing.
pub fn nvo_from_supports(tasks: Vec<String>, supports: &[Vec<bool>], source: &str) -> TaskSpace {
    let n = supports.len();
    let shared = |a: usize, b: usize| {
        supports[a]
            .iter()
            .zip(&supports[b])
            .filter(|(x, y)| **x && **y)
            .count()
    };
    let counts: Vec<Vec<usize>> = (0..n).map(|a| (0..n).map(|b| shared(a, b)).collect()).collect();
    let max = (0..n)
        .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| counts[a][b])
        .max()
        .unwrap_or(0);
    TaskSpace::from_fn(tasks, Metric::VocabOverlap, source, |a, b| match (max, a == b) {
        (0, _) => None,
        (_, true) => Some(1.0),
        _ => Some(counts[a][b] as f64 / max as f64),
    })
}

/// Normalized vocabulary overlap over train-split supports.
pub fn nvo_control(suite: &TaskSuite) -> TaskSpace {
    let v = suite.vocab.len();
    let supports: Vec<Vec<bool>> = suite
        .paradigms
        .iter()
        .map(|p| vocab_distribution(p, v).into_iter().map(|x| x > 0.0).collect())
        .collect();
    let space = nvo_from_supports(ids(suite), &supports, &suite.hash());
    if space.values.iter().flatten().all(Option::is_none) {
        log::warn!("no two paradigms share a token; vocabulary overlap is undefined");
    }
    space
}

/// Token ids sorted by descending frequency over every train split, ties
/// by ascending id.
pub fn frequency_order(suite: &TaskSuite) -> Vec<usize> {
    let mut counts = vec![0usize; suite.vocab.len()];
    for p in &suite.paradigms {
        for q in p.train_pairs() {
            for &t in q.good.iter().chain(&q.bad) {
                if let Some(c) = counts.get_mut(t as usize) {
                    *c += 1;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

/// 1-Wasserstein distance between two histograms on unit-spaced bins: the L1
/// distance of their CDFs. Inputs are normalized first; `None` if either
/// has no mass.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> Option<f64> {
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if sp <= 0.0 || sq <= 0.0 {
        return None;
    }
    let (mut fp, mut fq, mut d) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        fp += a / sp;
        fq += b / sq;
        d += (fp - fq).abs();
    }
    // The last bin carries no distance: both CDFs are 1 there.
    Some(d - (fp - fq).abs())
}

/// Pairwise WD between histograms laid out along `order`.
pub fn wasserstein_from_histograms(tasks: Vec<String>, hists: &[Vec<f64>], order: &[usize], source: &str) -> TaskSpace {
    let sorted: Vec<Vec<f64>> = hists.iter().map(|h| order.iter().map(|&k| h[k]).collect()).collect();
    TaskSpace::from_fn(tasks, Metric::Wasserstein, source, |a, b| {
        if a == b {
            wasserstein_1d(&sorted[a], &sorted[a]).map(|_| 0.0)
        } else {
            wasserstein_1d(&sorted[a], &sorted[b])
        }
    })
}

/// WD between train-split vocabulary histograms along the global
/// frequency ordering.
pub fn wasserstein_control(suite: &TaskSuite) -> TaskSpace {
    let v = suite.vocab.len();
    let hists: Vec<Vec<f64>> = suite.paradigms.iter().map(|p| vocab_distribution(p, v)).collect();
    wasserstein_from_histograms(ids(suite), &hists, &frequency_order(suite), &suite.hash())
}

/// `1 - WD` cellwise, for display beside the similarity spaces.
pub fn wasserstein_similarity(wd: &TaskSpace) -> TaskSpace {
    TaskSpace::from_fn(wd.tasks.clone(), Metric::WassersteinSimilarity, wd.source.clone(), |a, b| {
        wd.get(a, b).map(|d| 1.0 - d)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_suite, SuiteSpec};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    fn support(ids: &[usize]) -> Vec<bool> {
        (0..8).map(|i| ids.contains(&i)).collect()
    }

    #[test]
    fn nvo_hand_normalization() {
        // Overlaps: (0,1) = 1, (0,2) = 2, (1,2) = 2.
        let s = [support(&[0, 1, 2]), support(&[0, 5, 6]), support(&[1, 2, 5, 6])];
        let nvo = nvo_from_supports(names(3), &s, "");
        assert_eq!(nvo.get(0, 1), Some(0.5));
        assert_eq!(nvo.get(0, 2), Some(1.0));
        assert_eq!(nvo.get(1, 2), Some(1.0));
        assert_eq!(nvo.get(2, 1), Some(1.0));
        assert_eq!(nvo.get(1, 1), Some(1.0));
    }

    #[test]
    fn nvo_disjoint_and_degenerate() {
        let s = [support(&[0, 1]), support(&[1, 2]), support(&[6])];
        let nvo = nvo_from_supports(names(3), &s, "");
        assert_eq!(nvo.get(0, 2), Some(0.0));
        let none = nvo_from_supports(names(2), &[support(&[0]), support(&[1])], "");
        assert!(none.values.iter().flatten().all(Option::is_none));
    }

    #[test]
    fn wd_hand_cases() {
        assert_eq!(wasserstein_1d(&[1.0, 0.0], &[0.0, 1.0]), Some(1.0));
        assert_eq!(wasserstein_1d(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]), Some(2.0));
        assert_eq!(wasserstein_1d(&[0.3, 0.7], &[0.3, 0.7]), Some(0.0));
        // Half the mass moves one bin: CDFs (0.5, 1) vs (0, 1).
        assert_eq!(wasserstein_1d(&[0.5, 0.5], &[0.0, 1.0]), Some(0.5));
        assert_eq!(wasserstein_1d(&[0.0, 0.0], &[0.0, 1.0]), None);
    }

    #[test]
    fn wd_uses_the_given_order() {
        let hists = [vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0; 3]];
        let natural = wasserstein_from_histograms(names(3), &hists, &[0, 1, 2], "");
        assert_eq!(natural.get(0, 1), Some(2.0));
        let swapped = wasserstein_from_histograms(names(3), &hists, &[0, 2, 1], "");
        assert_eq!(swapped.get(0, 1), Some(1.0));
        assert_eq!(swapped.get(1, 0), swapped.get(0, 1));
        assert_eq!(natural.get(2, 0), None);
        assert_eq!(natural.get(2, 2), None);
        assert_eq!(natural.get(1, 1), Some(0.0));
        let sim = wasserstein_similarity(&natural);
        assert_eq!(sim.get(0, 1), Some(-1.0));
    }

    #[test]
    fn controls_on_the_default_suite() {
        let suite = generate_suite(
            1,
            &SuiteSpec {
                pairs_per: 40,
                ..SuiteSpec::default()
            },
        )
        .unwrap();
        let nvo = nvo_control(&suite);
        let wd = wasserstein_control(&suite);
        let n = suite.paradigms.len();
        let mut hit_one = false;
        for a in 0..n {
            for b in 0..n {
                let v = nvo.get(a, b).unwrap();
                assert!((0.0..=1.0).contains(&v));
                hit_one |= a != b && v == 1.0;
                assert_eq!(wd.get(a, b), wd.get(b, a));
                assert!(wd.get(a, b).unwrap() >= 0.0);
            }
        }
        assert!(hit_one);
        let order = frequency_order(&suite);
        assert_eq!(order.len(), suite.vocab.len());
        // Unused tokens (count 0) trail in id order.
        let tail: Vec<usize> = order.iter().rev().take(2).copied().collect();
        assert!(tail[0] > tail[1]);
    }
}
