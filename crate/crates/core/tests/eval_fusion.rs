use std::collections::{BTreeMap, BTreeSet};

use approx::assert_abs_diff_eq;
use cardiopulm::cohort::Task;
use cardiopulm::eval::{auc, bootstrap_ci, evaluate, split_subjects, Aggregation};
use cardiopulm::fusion::{
    forward, load_params, save_params, train, FusionInput, ModelParams, TrainingConfig, Variant,
};
use cardiopulm::reasoning::KnowledgeGraph;
use cardiopulm::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (4usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec(-10.0f64..10.0, n),
            proptest::collection::vec(0u8..=1, n).prop_filter("two classes", |l| l.contains(&0) && l.contains(&1)),
        )
    })
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_maps((s, y) in scored()) {
        let base = auc(&s, &y).unwrap();
        let mapped: Vec<f64> = s.iter().map(|x| (x * 0.3).exp() + 2.0).collect();
        assert_abs_diff_eq!(auc(&mapped, &y).unwrap(), base, epsilon = 1e-12);
    }

    #[test]
    fn negating_scores_mirrors_auc((s, y) in scored()) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(auc(&neg, &y).unwrap() + auc(&s, &y).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn split_folds_partition_the_subjects(n in 10usize..300, seed in 0u64..1000) {
        let subjects: Vec<(String, u8)> = (0..n).map(|i| (format!("s{i:04}"), (i % 3) as u8)).collect();
        let split = split_subjects(&subjects, seed).unwrap();
        let all: Vec<&String> = split.folds().iter().flat_map(|f| f.iter()).collect();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), n);
        prop_assert_eq!(split, split_subjects(&subjects, seed).unwrap());
    }
}

#[test]
fn single_class_labels_are_rejected() {
    assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass(_))));
}

#[test]
fn bootstrap_is_deterministic_and_brackets_the_median() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y: Vec<u8> = (0..80).map(|i| u8::from(i % 4 == 0)).collect();
    let s: Vec<f64> = y.iter().map(|&l| l as f64 + rng.random_range(-1.0..1.0)).collect();
    let ids: Vec<String> = (0..80).map(|i| format!("s{i}")).collect();
    let a = bootstrap_ci(&s, &y, &ids, 500, 9).unwrap();
    let b = bootstrap_ci(&s, &y, &ids, 500, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.lo <= a.median && a.median <= a.hi);
}

#[test]
fn evaluation_aggregates_scans_per_subject() {
    let labels: BTreeMap<String, u8> = (0..20).map(|i| (format!("s{i:02}"), u8::from(i < 6))).collect();
    let mut scans = Vec::new();
    for (id, &l) in &labels {
        // The max rule sees the positive subjects' high scan; the mean rule does not.
        scans.push((id.clone(), 0.2));
        scans.push((id.clone(), if l == 1 { 0.9 } else { 0.5 }));
    }
    let max = evaluate(Task::Screening, "t", &scans, &labels, Aggregation::Max, 200, 1).unwrap();
    assert_eq!((max.n_pos, max.n_neg), (6, 14));
    assert_eq!(max.auc, 1.0);
    assert!(max.roc_points.len() >= 2);
}

fn linear_data(n: usize, seed: u64) -> Vec<FusionInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = 1.0 / (1.0 + (-(2.0 * z[0] - 1.5 * z[2])).exp());
            let mut x = FusionInput::from_vector(z, u8::from(rng.random_bool(p)));
            x.subject_id = format!("s{i}");
            x.scan_id = format!("s{i}");
            x
        })
        .collect()
}

#[test]
fn training_learns_a_linear_signal_and_is_reproducible() {
    let kb = KnowledgeGraph::default_kb().stamp();
    let (tr, va, te) = (linear_data(600, 1), linear_data(150, 2), linear_data(400, 3));
    let config = TrainingConfig { lr: 1e-2, batch_size: 32, hidden_width: 0, max_epochs: 40, seed: 5, ..TrainingConfig::default() };
    let a = train(&tr, &va, Variant::CardiacOnly, &kb, &config).unwrap();
    let b = train(&tr, &va, Variant::CardiacOnly, &kb, &config).unwrap();
    assert_eq!(a.params, b.params);
    let scores: Vec<f64> = te.iter().map(|x| forward(&a.params, x).unwrap()).collect();
    let labels: Vec<u8> = te.iter().map(|x| x.label).collect();
    let oracle: Vec<f64> = te.iter().map(|x| 2.0 * x.z_card[0] - 1.5 * x.z_card[2]).collect();
    assert!(auc(&scores, &labels).unwrap() > auc(&oracle, &labels).unwrap() - 0.03);
}

#[test]
fn params_round_trip_and_reject_a_foreign_kb() {
    let kb = KnowledgeGraph::default_kb();
    let p = ModelParams::init(Variant::CardiacLungReasoning, &kb.stamp(), [4, kb.d_reason(), 6], 5, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_params(&p, &path).unwrap();
    assert_eq!(load_params(&path, &kb.stamp()).unwrap(), p);

    let mut other = kb.stamp();
    other.version = format!("{}-edited", other.version);
    assert!(load_params(&path, &other).is_err());
}
