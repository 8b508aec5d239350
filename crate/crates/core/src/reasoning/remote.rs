//! Client for an external reasoning service.
//!
//! The response is checked against the local knowledge base before use:
//! indicator dimension and range, chain activations, a rationale whenever
//! chains exist, and a judgment consistent with the consequence indicators.

use serde::{Deserialize, Serialize};

use super::{Chain, Judgment, KnowledgeGraph, Level, ReasoningTrace, TraceSource, JUDGMENT_THRESHOLD};
use crate::perception::{FindingSet, FindingsDocument};
use crate::remote::{post_json, RemoteConfig};
use crate::{Error, Result};

#[derive(Serialize)]
struct ReasoningRequest<'a> {
    findings: Vec<crate::perception::WireFinding>,
    kb_version: &'a str,
}

#[derive(Deserialize)]
struct ReasoningResponse {
    #[serde(default)]
    chains: Vec<Chain>,
    indicator_vector: Vec<f64>,
    #[serde(default)]
    rationale: Option<String>,
    judgment: Judgment,
}

pub fn fetch_reasoning_remote(
    findings: &FindingSet,
    kb: &KnowledgeGraph,
    config: &RemoteConfig,
) -> Result<ReasoningTrace> {
    let retained = FindingsDocument::from_set(findings)
        .findings
        .into_iter()
        .filter(|w| w.name.parse().map(|f| findings.is_retained(f)).unwrap_or(false))
        .collect();
    let request = ReasoningRequest {
        findings: retained,
        kb_version: kb.version(),
    };
    let resp: ReasoningResponse = post_json(config, &request, &config.endpoint)?;
    validate_response(resp, kb)
}

fn validate_response(resp: ReasoningResponse, kb: &KnowledgeGraph) -> Result<ReasoningTrace> {
    if resp.indicator_vector.len() != kb.d_reason() {
        return Err(Error::Dimension {
            expected: kb.d_reason(),
            actual: resp.indicator_vector.len(),
        });
    }
    if let Some(x) = resp.indicator_vector.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Schema(format!("indicator value {x} outside [0, 1]")));
    }
    for c in &resp.chains {
        if !(c.activation > 0.0 && c.activation <= 1.0) {
            return Err(Error::Schema(format!("chain activation {} outside (0, 1]", c.activation)));
        }
        if let Some(n) = c.nodes.iter().find(|n| kb.node_index(n).is_none()) {
            return Err(Error::Schema(format!("chain names unknown node '{n}'")));
        }
    }
    let rationale = match resp.rationale {
        Some(r) if !r.trim().is_empty() => r,
        _ if !resp.chains.is_empty() => {
            return Err(Error::Schema("missing rationale for nonempty chains".into()))
        }
        _ => super::EMPTY_RATIONALE.to_string(),
    };
    let elevated = kb
        .indicator_nodes()
        .iter()
        .zip(&resp.indicator_vector)
        .any(|(&i, &v)| kb.nodes()[i].level == Level::Consequence && v >= JUDGMENT_THRESHOLD);
    if elevated != (resp.judgment == Judgment::ElevatedRisk) {
        return Err(Error::Schema("judgment inconsistent with consequence indicators".into()));
    }
    Ok(ReasoningTrace {
        chains: resp.chains,
        indicator_vector: resp.indicator_vector,
        rationale,
        judgment: resp.judgment,
        kb_version: kb.version().to_string(),
        source: TraceSource::ExternalService,
    })
}
