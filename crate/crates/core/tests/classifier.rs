mod common;

use common::{auc_oracle, gradient_error, graph_with_adjacency, random_connected_graph, seeded};
use fedni::classifier::{auc, ce_loss, evaluate_metrics, Classifier, GraphInput};
use fedni::numerics::{Bind, Tape};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn cross_entropy_gradient_on_six_nodes() {
    let mut rng = seeded(41);
    let g = graph_with_adjacency(random_connected_graph(6, 3, &mut rng), &mut rng);
    let input = GraphInput::new(&g);
    let mask = vec![true, true, false, true, true, false];
    let mut clf = Classifier::new(g.feature_dim(), &mut rng);
    let err = gradient_error(
        &mut clf,
        &mut |m, t| {
            let logits = m.forward(t, &input, Bind::Train);
            ce_loss(t, logits, &g.labels, &mask).unwrap()
        },
        usize::MAX,
        &mut rng,
    );
    assert!(err < 1.0, "{err}");
}

#[test]
fn cross_entropy_equals_per_node_sum() {
    let mut rng = seeded(42);
    for _ in 0..10 {
        let g = graph_with_adjacency(random_connected_graph(15, 6, &mut rng), &mut rng);
        let input = GraphInput::new(&g);
        let clf = Classifier::new(g.feature_dim(), &mut rng);
        let mask: Vec<bool> = (0..15).map(|_| rng.random_bool(0.6)).collect();
        if !mask.iter().any(|&b| b) {
            continue;
        }
        let probs = clf.predict(&input).unwrap();
        let mut want = 0.0;
        for i in (0..15).filter(|&i| mask[i]) {
            let p = probs.get(i, 1).clamp(1e-7, 1.0 - 1e-7);
            want -= if g.labels[i] == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            };
        }
        let mut t = Tape::new();
        let logits = clf.forward(&mut t, &input, Bind::Frozen);
        let l = ce_loss(&mut t, logits, &g.labels, &mask).unwrap();
        assert!((t.scalar(l) - want).abs() < 1e-9 * want.max(1.0));
    }
}

#[test]
fn auc_equals_pair_count() {
    let mut rng = seeded(43);
    for _ in 0..100 {
        let scores: Vec<f64> = (0..30)
            .map(|_| f64::from(rng.random_range(0..12)) / 11.0)
            .collect();
        let labels: Vec<u8> = (0..30).map(|_| rng.random_range(0..2)).collect();
        match (auc(&scores, &labels), auc_oracle(&scores, &labels)) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
            (a, b) => assert_eq!(a, b),
        }
    }
}

#[test]
fn threshold_metrics_match_confusion_counts() {
    let mut rng = seeded(44);
    for _ in 0..50 {
        let p: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<u8> = (0..30).map(|_| rng.random_range(0..2)).collect();
        let mask: Vec<bool> = (0..30).map(|_| rng.random_bool(0.7)).collect();
        if !mask.iter().any(|&b| b) {
            continue;
        }
        let m = evaluate_metrics(&p, &y, &mask).unwrap();
        let sel: Vec<usize> = (0..30).filter(|&i| mask[i]).collect();
        let correct = sel
            .iter()
            .filter(|&&i| u8::from(p[i] > 0.5) == y[i])
            .count();
        let tp = sel.iter().filter(|&&i| p[i] > 0.5 && y[i] == 1).count() as f64;
        let pos_pred = sel.iter().filter(|&&i| p[i] > 0.5).count() as f64;
        let pos = sel.iter().filter(|&&i| y[i] == 1).count() as f64;
        assert!((m.accuracy - correct as f64 / sel.len() as f64).abs() < 1e-12);
        if pos_pred > 0.0 {
            assert!((m.precision - tp / pos_pred).abs() < 1e-12);
        }
        if pos > 0.0 {
            assert!((m.recall - tp / pos).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn predictions_follow_node_relabeling(seed in 0u64..10_000, shift in 1usize..12) {
        let n = 12;
        let mut rng = seeded(seed);
        let g = graph_with_adjacency(random_connected_graph(n, 5, &mut rng), &mut rng);
        let perm: Vec<usize> = (0..n).map(|i| (i * shift + 5) % n).collect();
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        prop_assume!(sorted == (0..n).collect::<Vec<_>>());
        let clf = Classifier::new(g.feature_dim(), &mut rng);
        let p = clf.predict(&GraphInput::new(&g)).unwrap();
        let q = clf.predict(&GraphInput::new(&g.induced(&perm))).unwrap();
        prop_assert!(q.max_abs_diff(&p.select_rows(&perm)) < 1e-12);
    }
}
