use cardiopulm::cohort::{bayes_optimal_auc, sample_cohort, CohortOptions, PhantomSpec, RiskWeights, Task};
use cardiopulm::locator::LocatorConfig;
use cardiopulm::perception::{filter_findings, Finding, FindingSource, ScoredFinding};
use cardiopulm::pipeline::{process_volume, ScanContext};
use cardiopulm::reasoning::{node_activations, reason, KbEdge, Judgment, KnowledgeGraph, EMPTY_RATIONALE};
use cardiopulm::Error;

fn findings(pairs: &[(Finding, f64)]) -> cardiopulm::perception::FindingSet {
    let raw: Vec<ScoredFinding> = pairs.iter().map(|&(name, score)| ScoredFinding { name, score }).collect();
    filter_findings(&raw, FindingSource::File).unwrap()
}

#[test]
fn no_retained_findings_means_an_empty_trace() {
    let kb = KnowledgeGraph::default_kb();
    let t = reason(&findings(&[(Finding::Opacity, 0.2), (Finding::Nodule, 0.49)]), &kb);
    assert!(t.chains.is_empty());
    assert_eq!(t.rationale, EMPTY_RATIONALE);
    assert!(t.indicator_vector.iter().all(|&x| x == 0.0));
    assert_eq!(t.indicator_vector.len(), kb.d_reason());
}

#[test]
fn the_knowledge_base_is_editable_as_json() {
    let kb = KnowledgeGraph::default_kb();
    let mut doc: serde_json::Value = serde_json::from_str(&kb.to_json().unwrap()).unwrap();
    doc["version"] = "site-kb-2".into();
    let extra = KbEdge {
        from: "nodule".into(),
        to: "chronic_inflammation".into(),
        weight: 0.7,
        phrase: "local inflammatory response".into(),
        and_group: None,
    };
    doc["edges"].as_array_mut().unwrap().push(serde_json::to_value(&extra).unwrap());
    let edited = KnowledgeGraph::from_json(&doc.to_string()).unwrap();
    assert_eq!(edited.version(), "site-kb-2");

    let nodule = findings(&[(Finding::Nodule, 0.9)]);
    let before = node_activations(&nodule, &kb);
    let after = node_activations(&nodule, &edited);
    let i = edited.node_index("chronic_inflammation").unwrap();
    assert_eq!(before[i], 0.0);
    assert!(after[i] > 0.0);
    let t = reason(&nodule, &edited);
    assert!(t.rationale.contains("local inflammatory response"), "{}", t.rationale);
    assert_eq!(t.kb_version, "site-kb-2");
}

#[test]
fn cyclic_or_dangling_knowledge_bases_are_rejected() {
    let kb = KnowledgeGraph::default_kb();
    let mut doc: serde_json::Value = serde_json::from_str(&kb.to_json().unwrap()).unwrap();
    let back_edge = serde_json::json!({"from": "increased_cvd_risk", "to": "hypoxemia", "weight": 0.5, "phrase": "loop"});
    doc["edges"].as_array_mut().unwrap().push(back_edge);
    assert!(matches!(KnowledgeGraph::from_json(&doc.to_string()), Err(Error::KnowledgeBase(_))));

    let mut doc: serde_json::Value = serde_json::from_str(&kb.to_json().unwrap()).unwrap();
    let dangling = serde_json::json!({"from": "opacity", "to": "nowhere", "weight": 0.5, "phrase": "x"});
    doc["edges"].as_array_mut().unwrap().push(dangling);
    assert!(matches!(KnowledgeGraph::from_json(&doc.to_string()), Err(Error::KnowledgeBase(_))));
}

#[test]
fn severe_effusion_drives_an_elevated_judgment_end_to_end() {
    let ctx = ScanContext::shipped(LocatorConfig { roi_extent: [24, 24, 24] }, 1.5);
    let healthy = cardiopulm::cohort::generate_phantom(&PhantomSpec::standard(2, [64, 64, 64])).unwrap();
    let sick_spec = PhantomSpec::standard(2, [64, 64, 64])
        .with_severity(Finding::PleuralEffusion, 0.9)
        .with_severity(Finding::Emphysema, 0.9);
    let sick = cardiopulm::cohort::generate_phantom(&sick_spec).unwrap();

    let h = process_volume(&healthy, &ctx).unwrap();
    let s = process_volume(&sick, &ctx).unwrap();
    assert!(h.findings.retained().is_empty(), "{:?}", h.findings.retained());
    assert!(s.findings.is_retained(Finding::PleuralEffusion));
    assert!(s.findings.is_retained(Finding::Emphysema));
    assert_eq!(h.trace.judgment, Judgment::NotElevated);
    assert_eq!(s.trace.judgment, Judgment::ElevatedRisk);
    assert!(s.trajectory.values.iter().zip(&h.trajectory.values).all(|(a, b)| a >= b));
}

#[test]
fn cohorts_are_reproducible_and_seed_dependent() {
    let options = CohortOptions { dims: [48, 48, 48], heart_jitter: 1.0, scans_per_subject: 2, ..CohortOptions::default() };
    let w = RiskWeights::default();
    let a = sample_cohort(300, 5, &w, &options).unwrap();
    assert_eq!(a, sample_cohort(300, 5, &w, &options).unwrap());
    assert_ne!(a, sample_cohort(300, 6, &w, &options).unwrap());
    assert!(a.iter().all(|r| r.scan_ids.len() == 2 && r.label_mortality <= r.label_screening));
    assert_ne!(a[0].scan_spec(0).seed, a[0].scan_spec(1).seed);

    let prevalence = a.iter().filter(|r| r.label_screening == 1).count() as f64 / a.len() as f64;
    assert!((0.08..0.35).contains(&prevalence), "{prevalence}");
    assert!(bayes_optimal_auc(&a, Task::Screening).unwrap() > 0.7);
}

#[test]
fn tiny_cohorts_are_rejected() {
    let err = sample_cohort(5, 1, &RiskWeights::default(), &CohortOptions::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}
