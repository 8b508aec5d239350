//! Runs the knowledge-graph reasoning on a hand-written finding set and
//! prints the chains, indicators and rationale.

use cardiopulm::perception::{filter_findings, Finding, FindingSource, ScoredFinding};
use cardiopulm::reasoning::{encode_indicators, reason, KnowledgeGraph};

fn main() -> cardiopulm::Result<()> {
    let raw = [
        ScoredFinding { name: Finding::Opacity, score: 0.8 },
        ScoredFinding { name: Finding::PleuralEffusion, score: 0.7 },
        ScoredFinding { name: Finding::Fibrosis, score: 0.9 },
        ScoredFinding { name: Finding::Nodule, score: 0.2 },
    ];
    let findings = filter_findings(&raw, FindingSource::File)?;
    let kb = KnowledgeGraph::default_kb();
    let trace = reason(&findings, &kb);
    for chain in &trace.chains {
        println!("{:.3}  {}", chain.activation, chain.nodes.join(" -> "));
    }
    let indicators = encode_indicators(&trace, &kb.stamp())?;
    for (name, x) in kb.indicator_names().iter().zip(&indicators) {
        println!("{name:<32} {x:.3}");
    }
    println!("judgment: {:?}", trace.judgment);
    println!("{}", trace.rationale);
    Ok(())
}
