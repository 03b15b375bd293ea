use proptest::prelude::*;
use taskspace::analytics::{
    correlate_spaces, cosine_space, jaccard_space, space_correlation, wasserstein_1d, Metric, TaskSpace,
};
use taskspace::ftgd::{gradient_mass_stats, select_subspace, GradientDifferential, SubspaceDelta};
use taskspace::model::masked_sgd_step;
use taskspace::probing::{normalize_transfer, transfer_space, ProbedTask};

fn histogram(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, max).prop_filter("positive mass", |h| h.iter().sum::<f64>() > 1e-6)
}

fn symmetric(n: usize, cells: &[f64], metric: Metric) -> TaskSpace {
    let mut values = vec![vec![Some(1.0); n]; n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            values[i][j] = Some(cells[k]);
            values[j][i] = Some(cells[k]);
            k += 1;
        }
    }
    TaskSpace::new((0..n).map(|i| format!("t{i}")).collect(), values, metric, "prop").unwrap()
}

fn space_pair() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<usize>)> {
    (4usize..8).prop_flat_map(|n| {
        let m = n * (n - 1) / 2;
        (
            Just(n),
            prop::collection::vec(-1.0f64..1.0, m),
            prop::collection::vec(-1.0f64..1.0, m),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

fn task(name: &str, support: &[bool], values: &[f64]) -> ProbedTask {
    let indices: Vec<usize> = (0..support.len()).filter(|&i| support[i]).collect();
    let vals: Vec<f64> = indices.iter().map(|&i| values[i]).collect();
    ProbedTask {
        task: name.into(),
        subspace_size: indices.len(),
        delta: (!indices.is_empty()).then(|| SubspaceDelta {
            checkpoint: "prop".into(),
            paradigm: name.into(),
            epsilon: 1e-3,
            n_params: support.len(),
            total_mass: values.iter().map(|v| v.abs()).sum(),
            indices,
            values: vals,
        }),
        error: None,
    }
}

proptest! {
    #[test]
    fn wasserstein_is_a_metric(p in histogram(8), q in histogram(8), r in histogram(8)) {
        let d = |a: &[f64], b: &[f64]| wasserstein_1d(a, b).unwrap();
        prop_assert!(d(&p, &p).abs() < 1e-12);
        prop_assert!((d(&p, &q) - d(&q, &p)).abs() < 1e-12);
        prop_assert!(d(&p, &q) >= 0.0);
        prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-12);
    }

    #[test]
    fn correlation_ignores_a_shared_relabelling((n, a, b, order) in space_pair()) {
        let (x, y) = (symmetric(n, &a, Metric::Cosine), symmetric(n, &b, Metric::Cosine));
        let base = space_correlation(&x, &y);
        prop_assume!(base.is_ok());
        let moved = space_correlation(&x.permuted(&order), &y.permuted(&order)).unwrap();
        prop_assert!((base.unwrap() - moved).abs() < 1e-12);
    }

    #[test]
    fn normalized_transfer_is_bounded_and_signed(pre in 0.0f64..=1.0, post in 0.0f64..=1.0) {
        let t = normalize_transfer(pre, post).unwrap();
        prop_assert!((-1.0..=1.0).contains(&t));
        prop_assert_eq!(t == 0.0, pre == post);
        prop_assert_eq!(t > 0.0, post > pre);
    }

    #[test]
    fn transfer_space_follows_task_order(
        (pre, post, order) in (3usize..6).prop_flat_map(|n| (
            prop::collection::vec(0.0f64..=1.0, n),
            prop::collection::vec(prop::collection::vec(0.0f64..=1.0, n), n),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        ))
    ) {
        let n = pre.len();
        let tasks: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let rows: Vec<Option<Vec<f64>>> = post.iter().cloned().map(Some).collect();
        let (space, records) = transfer_space(&tasks, &pre, &rows, "prop").unwrap();
        prop_assert_eq!(records.len(), n * n);

        let p_tasks: Vec<String> = order.iter().map(|&k| tasks[k].clone()).collect();
        let p_pre: Vec<f64> = order.iter().map(|&k| pre[k]).collect();
        let p_rows: Vec<Option<Vec<f64>>> =
            order.iter().map(|&k| Some(order.iter().map(|&m| post[k][m]).collect())).collect();
        let (moved, _) = transfer_space(&p_tasks, &p_pre, &p_rows, "prop").unwrap();
        prop_assert_eq!(moved.values, space.permuted(&order).values);
    }

    #[test]
    fn subspace_similarities_are_bounded(
        supports in prop::collection::vec(prop::collection::vec(any::<bool>(), 12), 3),
        values in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 12), 3),
        scale in 0.1f64..10.0,
    ) {
        prop_assume!(supports.iter().all(|s| s.iter().any(|&b| b)));
        let tasks: Vec<ProbedTask> =
            (0..3).map(|i| task(&format!("t{i}"), &supports[i], &values[i])).collect();
        let j = jaccard_space(&tasks).unwrap();
        let c = cosine_space(&tasks, false).unwrap();
        for a in 0..3 {
            prop_assert_eq!(j.get(a, a), Some(1.0));
            for b in 0..3 {
                let v = j.get(a, b).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert_eq!(j.get(a, b), j.get(b, a));
                if let Some(cv) = c.get(a, b) {
                    prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&cv));
                }
            }
        }
        let scaled: Vec<f64> = values[0].iter().map(|v| v * scale).collect();
        let mut rescaled = tasks.clone();
        rescaled[0] = task("t0", &supports[0], &scaled);
        let c2 = cosine_space(&rescaled, false).unwrap();
        for b in 1..3 {
            match (c.get(0, b), c2.get(0, b)) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }

    #[test]
    fn subspace_selection_splits_on_epsilon(
        g in prop::collection::vec(-0.01f64..0.01, 1..64),
        eps in 1e-4f64..5e-3,
    ) {
        let gd = GradientDifferential::from_parts(g.clone().into(), vec![0.0; g.len()].into(), "p", "ck");
        match select_subspace(&gd, eps) {
            Ok(sub) => {
                for (i, v) in g.iter().enumerate() {
                    prop_assert_eq!(sub.indices.binary_search(&i).is_ok(), v.abs() > eps);
                }
                let stats = gradient_mass_stats(&gd, &sub).unwrap();
                prop_assert!(stats.param_fraction > 0.0 && stats.param_fraction <= 1.0);
                prop_assert!(stats.mass_fraction > 0.0 && stats.mass_fraction <= 1.0 + 1e-12);
                if let Ok(wider) = select_subspace(&gd, eps * 2.0) {
                    prop_assert!(wider.indices.iter().all(|i| sub.indices.contains(i)));
                }
            }
            Err(_) => prop_assert!(g.iter().all(|v| v.abs() <= eps)),
        }
    }

    #[test]
    fn masked_step_writes_only_the_mask(
        (theta, grad, mask) in (1usize..40).prop_flat_map(|n| (
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::btree_set(0..n, 0..n),
        )),
        lr in 0.0f64..1.0,
    ) {
        let mask: Vec<usize> = mask.into_iter().collect();
        let mut out = theta.clone();
        masked_sgd_step(&mut out, &grad, &mask, lr).unwrap();
        for i in 0..theta.len() {
            if mask.contains(&i) {
                prop_assert_eq!(out[i], theta[i] - lr * grad[i]);
            } else {
                prop_assert_eq!(out[i].to_bits(), theta[i].to_bits());
            }
        }
    }
}

#[test]
fn permutation_p_values_are_calibrated_under_the_null() {
    let n = 6;
    let m = n * (n - 1) / 2;
    let mut rejections = 0;
    let trials = 100;
    for t in 0..trials {
        let mut rng = taskspace::rng::substream(t, "null-calibration");
        let mut draw = || (0..m).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect::<Vec<f64>>();
        let (a, b) = (draw(), draw());
        let x = symmetric(n, &a, Metric::Cosine);
        let y = symmetric(n, &b, Metric::Cosine);
        let c = correlate_spaces(&x, &y, 200, t).unwrap();
        if c.p_perm < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / trials as f64;
    assert!((0.01..=0.12).contains(&rate), "rejection rate {rate}");
}
