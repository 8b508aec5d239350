//! Causal reasoning over the knowledge graph.
//!
//! Only retained findings seed the graph. A node's activation is the maximum
//! over its incoming edges of `parent activation × edge weight`; an
//! `and_group` contributes the minimum over its member edges instead. Chains
//! are the complete finding → mechanism → effect → consequence paths with a
//! nonzero activation.

mod kb;
pub mod remote;

use serde::{Deserialize, Serialize};

use crate::perception::FindingSet;
use crate::{Error, Result};

pub use kb::{load_knowledge_base, KbEdge, KbNode, KbStamp, KnowledgeGraph, Level};
pub use remote::fetch_reasoning_remote;

/// Level-3 activation at or above which the judgment is elevated risk.
pub const JUDGMENT_THRESHOLD: f64 = 0.5;
pub const EMPTY_RATIONALE: &str = "No pulmonary drivers of cardiovascular risk identified.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    ElevatedRisk,
    NotElevated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    Engine,
    ExternalService,
}

/// One complete path; `phrases[i]` labels the edge `nodes[i] -> nodes[i + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub nodes: Vec<String>,
    #[serde(default)]
    pub phrases: Vec<String>,
    pub activation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub chains: Vec<Chain>,
    pub indicator_vector: Vec<f64>,
    pub rationale: String,
    pub judgment: Judgment,
    pub kb_version: String,
    pub source: TraceSource,
}

impl ReasoningTrace {
    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }
}

/// Activation of every KB node (findings included) for a finding set.
pub fn node_activations(findings: &FindingSet, kb: &KnowledgeGraph) -> Vec<f64> {
    let n = kb.nodes().len();
    let mut act = vec![0.0f64; n];
    for (i, f) in kb.finding_nodes() {
        if findings.is_retained(f) {
            act[i] = findings.score_or_zero(f);
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| kb.nodes()[i].level != Level::Finding).collect();
    order.sort_by_key(|&i| (kb.nodes()[i].level, i));
    let edges = kb.edges();
    for t in order {
        let mut best = 0.0f64;
        for inc in &kb.or_in[t] {
            best = best.max(act[inc.from] * edges[inc.edge].weight);
        }
        for group in &kb.and_in[t] {
            best = best.max(and_value(group, &act, edges));
        }
        act[t] = best;
    }
    act
}

fn and_value(group: &[kb::Incoming], act: &[f64], edges: &[KbEdge]) -> f64 {
    group
        .iter()
        .map(|inc| act[inc.from] * edges[inc.edge].weight)
        .fold(f64::INFINITY, f64::min)
}

pub fn reason(findings: &FindingSet, kb: &KnowledgeGraph) -> ReasoningTrace {
    let act = node_activations(findings, kb);
    let mut chains = Vec::new();
    for (i, f) in kb.finding_nodes() {
        if findings.is_retained(f) && act[i] > 0.0 {
            let mut path = vec![i];
            let mut phrases = Vec::new();
            walk(kb, &act, &mut path, &mut phrases, act[i], &mut chains);
        }
    }
    chains.sort_by(|a: &Chain, b: &Chain| {
        b.activation
            .total_cmp(&a.activation)
            .then_with(|| a.nodes.cmp(&b.nodes))
    });

    let indicator_vector: Vec<f64> = kb.indicator_nodes().iter().map(|&i| act[i]).collect();
    let max_consequence = kb
        .indicator_nodes()
        .iter()
        .filter(|&&i| kb.nodes()[i].level == Level::Consequence)
        .map(|&i| act[i])
        .fold(0.0, f64::max);
    let judgment = if max_consequence >= JUDGMENT_THRESHOLD {
        Judgment::ElevatedRisk
    } else {
        Judgment::NotElevated
    };
    let mut trace = ReasoningTrace {
        chains,
        indicator_vector,
        rationale: String::new(),
        judgment,
        kb_version: kb.version().to_string(),
        source: TraceSource::Engine,
    };
    trace.rationale = render_rationale(&trace);
    trace
}

fn walk(
    kb: &KnowledgeGraph,
    act: &[f64],
    path: &mut Vec<usize>,
    phrases: &mut Vec<usize>,
    value: f64,
    out: &mut Vec<Chain>,
) {
    let at = *path.last().unwrap();
    if kb.nodes()[at].level == Level::Consequence {
        out.push(Chain {
            nodes: path.iter().map(|&i| kb.nodes()[i].name.clone()).collect(),
            phrases: phrases.iter().map(|&e| kb.edges()[e].phrase.clone()).collect(),
            activation: value,
        });
        return;
    }
    for &e in &kb.out[at] {
        let edge = &kb.edges()[e];
        let (_, to) = kb.edge_ends(e);
        let mut v = value * edge.weight;
        if let Some(g) = &edge.and_group {
            let group = kb.and_in[to]
                .iter()
                .find(|grp| grp.iter().any(|inc| kb.edges()[inc.edge].and_group.as_deref() == Some(g)))
                .expect("edge belongs to its group");
            v = v.min(and_value(group, act, kb.edges()));
        }
        if v > 0.0 {
            path.push(to);
            phrases.push(e);
            walk(kb, act, path, phrases, v, out);
            path.pop();
            phrases.pop();
        }
    }
}

/// The fixed-order indicator vector, checked against what a model expects.
pub fn encode_indicators(trace: &ReasoningTrace, expected: &KbStamp) -> Result<Vec<f64>> {
    if trace.kb_version != expected.version {
        return Err(Error::VersionMismatch(format!(
            "trace built with knowledge base '{}', model expects '{}'",
            trace.kb_version, expected.version
        )));
    }
    if trace.indicator_vector.len() != expected.d_reason {
        return Err(Error::Dimension {
            expected: expected.d_reason,
            actual: trace.indicator_vector.len(),
        });
    }
    Ok(trace.indicator_vector.clone())
}

fn display(name: &str) -> String {
    name.split('_')
        .map(|w| if w == "cvd" { "CVD" } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

/// Groups of (target node, source names, phrases) for edges at one chain
/// position, in order of first appearance.
fn edge_groups(chains: &[Chain], pos: usize) -> Vec<(String, Vec<String>, Vec<String>)> {
    let mut groups: Vec<(String, Vec<String>, Vec<String>)> = Vec::new();
    for c in chains {
        let (Some(from), Some(to)) = (c.nodes.get(pos), c.nodes.get(pos + 1)) else {
            continue;
        };
        let phrase = c.phrases.get(pos).map(String::as_str).unwrap_or("");
        let idx = match groups.iter().position(|g| &g.0 == to) {
            Some(i) => i,
            None => {
                groups.push((to.clone(), Vec::new(), Vec::new()));
                groups.len() - 1
            }
        };
        push_unique(&mut groups[idx].1, &display(from));
        if !phrase.is_empty() {
            push_unique(&mut groups[idx].2, phrase);
        }
    }
    groups
}

/// Templated rationale: one sentence per active mechanism, one per effect,
/// and a concluding sentence naming the consequences.
pub fn render_rationale(trace: &ReasoningTrace) -> String {
    if trace.chains.is_empty() {
        return EMPTY_RATIONALE.to_string();
    }
    let mut sentences = Vec::new();
    for (mechanism, findings, phrases) in edge_groups(&trace.chains, 0) {
        let verb = if findings.len() == 1 { "leads" } else { "lead" };
        let mut s = format!("{} {verb} to {}", join_list(&findings), display(&mechanism));
        if !phrases.is_empty() {
            s.push_str(&format!(" through {}", join_list(&phrases)));
        }
        sentences.push(capitalize(&s) + ".");
    }
    for (effect, mechanisms, phrases) in edge_groups(&trace.chains, 1) {
        let verb = if mechanisms.len() == 1 { "progresses" } else { "progress" };
        let mut s = format!("{} {verb} to {}", join_list(&mechanisms), display(&effect));
        if !phrases.is_empty() {
            s.push_str(&format!(" via {}", join_list(&phrases)));
        }
        sentences.push(capitalize(&s) + ".");
    }
    let consequences: Vec<String> = edge_groups(&trace.chains, 2)
        .into_iter()
        .map(|(c, _, phrases)| {
            if phrases.is_empty() {
                display(&c)
            } else {
                format!("{} by {}", display(&c), join_list(&phrases))
            }
        })
        .collect();
    sentences.push(format!(
        "These effects culminate in {}.",
        join_list(&consequences)
    ));
    sentences.push(match trace.judgment {
        Judgment::ElevatedRisk => "Overall cardiovascular risk is judged elevated.".to_string(),
        Judgment::NotElevated => "Overall cardiovascular risk is not judged elevated.".to_string(),
    });
    sentences.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{filter_findings, Finding, FindingSource, ScoredFinding};
    use proptest::prelude::*;

    fn set(items: &[(Finding, f64)]) -> FindingSet {
        let raw: Vec<_> = items.iter().map(|&(name, score)| ScoredFinding { name, score }).collect();
        filter_findings(&raw, FindingSource::RuleBased).unwrap()
    }

    fn value(trace: &ReasoningTrace, kb: &KnowledgeGraph, name: &str) -> f64 {
        let pos = kb.indicator_names().iter().position(|n| n == name).unwrap();
        trace.indicator_vector[pos]
    }

    #[test]
    fn three_finding_case() {
        let kb = KnowledgeGraph::default_kb();
        let t = reason(&set(&[(Finding::Opacity, 0.9), (Finding::PleuralEffusion, 0.8), (Finding::Fibrosis, 0.7)]), &kb);
        assert_eq!(t.judgment, Judgment::ElevatedRisk);
        // min(0.8*0.9*0.9*0.9, 0.9*0.9*0.9*0.9)
        assert!((value(&t, &kb, "right_ventricular_strain") - 0.5832).abs() < 1e-12);
        for needle in ["hypoxemia", "venous", "right ventricular strain"] {
            assert!(t.rationale.contains(needle), "{needle} missing from {}", t.rationale);
        }
        assert_eq!(render_rationale(&t), t.rationale);
        let acts: Vec<f64> = t.chains.iter().map(|c| c.activation).collect();
        assert!(acts.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn empty_findings() {
        let kb = KnowledgeGraph::default_kb();
        let t = reason(&set(&[(Finding::Opacity, 0.3)]), &kb);
        assert!(t.chains.is_empty());
        assert!(t.indicator_vector.iter().all(|&x| x == 0.0));
        assert_eq!(t.indicator_vector.len(), kb.d_reason());
        assert_eq!(t.judgment, Judgment::NotElevated);
        assert_eq!(t.rationale, EMPTY_RATIONALE);
    }

    #[test]
    fn unit_weights_pass_scores_through() {
        let mut kb_doc: serde_json::Value = serde_json::from_str(&KnowledgeGraph::default_kb().to_json().unwrap()).unwrap();
        for e in kb_doc["edges"].as_array_mut().unwrap() {
            e["weight"] = 1.0.into();
        }
        let kb = KnowledgeGraph::from_json(&kb_doc.to_string()).unwrap();
        let t = reason(&set(&[(Finding::Emphysema, 1.0)]), &kb);
        assert_eq!(value(&t, &kb, "hypoxemia"), 1.0);
        assert_eq!(value(&t, &kb, "pulmonary_hypertension"), 1.0);
    }

    fn chain_kb() -> KnowledgeGraph {
        KnowledgeGraph::from_json(
            r#"{"version":"t","nodes":[
                {"name":"opacity","level":"finding"},{"name":"nodule","level":"finding"},
                {"name":"a","level":"mechanism"},{"name":"b","level":"mechanism"},
                {"name":"c","level":"effect"},{"name":"d","level":"consequence"}],
              "edges":[
                {"from":"opacity","to":"a","weight":0.9,"phrase":"x"},
                {"from":"a","to":"c","weight":0.9,"phrase":"y"},
                {"from":"nodule","to":"b","weight":1.0,"phrase":"z"},
                {"from":"b","to":"c","weight":0.5,"phrase":"w"},
                {"from":"c","to":"d","weight":1.0,"phrase":"v"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn encode_single_chain_and_max_aggregation() {
        let kb = chain_kb();
        let t = reason(&set(&[(Finding::Opacity, 0.8)]), &kb);
        let v = encode_indicators(&t, &kb.stamp()).unwrap();
        assert!((v[2] - 0.8 * 0.9 * 0.9).abs() < 1e-12);
        // chain values into c: 0.6*0.5 = 0.3 via b, 0.8*0.9*0.9 = 0.648 via a
        let t = reason(&set(&[(Finding::Opacity, 0.8), (Finding::Nodule, 0.6)]), &kb);
        assert!((t.indicator_vector[2] - 0.648).abs() < 1e-12);
        let into_c: Vec<f64> = t.chains.iter().map(|c| c.activation).collect();
        assert_eq!(into_c.len(), 2);
        assert!((into_c[1] - 0.3).abs() < 1e-12);

        let other = KbStamp { version: "other".into(), d_reason: 4 };
        assert!(matches!(encode_indicators(&t, &other), Err(Error::VersionMismatch(_))));
        let wrong_dim = KbStamp { version: "t".into(), d_reason: 5 };
        assert!(matches!(encode_indicators(&t, &wrong_dim), Err(Error::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn monotone_sound_and_deterministic(
            a in proptest::array::uniform5(0.0f64..=1.0),
            bump in proptest::array::uniform5(0.0f64..=0.5),
        ) {
            let kb = KnowledgeGraph::default_kb();
            let lo: Vec<_> = Finding::ALL.iter().zip(a).map(|(&f, s)| (f, s)).collect();
            let hi: Vec<_> = Finding::ALL.iter().zip(a).zip(bump).map(|((&f, s), b)| (f, (s + b).min(1.0))).collect();
            let t_lo = reason(&set(&lo), &kb);
            let t_hi = reason(&set(&hi), &kb);
            for (x, y) in t_lo.indicator_vector.iter().zip(&t_hi.indicator_vector) {
                prop_assert!(x <= y);
            }
            prop_assert_eq!(&t_lo, &reason(&set(&lo), &kb));
            // every active node has an active parent, down to a retained finding
            let act = node_activations(&set(&lo), &kb);
            for (i, node) in kb.nodes().iter().enumerate() {
                if act[i] > 0.0 && node.level != Level::Finding {
                    prop_assert!(kb.edges().iter().any(|e| e.to == node.name && act[kb.node_index(&e.from).unwrap()] > 0.0));
                }
                if act[i] > 0.0 && node.level == Level::Consequence {
                    prop_assert!(t_lo.chains.iter().any(|c| c.nodes.last() == Some(&node.name)));
                }
            }
            let elevated = kb.indicator_nodes().iter().zip(&t_lo.indicator_vector)
                .any(|(&i, &v)| kb.nodes()[i].level == Level::Consequence && v >= JUDGMENT_THRESHOLD);
            prop_assert_eq!(elevated, t_lo.judgment == Judgment::ElevatedRisk);
        }
    }
}
