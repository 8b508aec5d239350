//! Knowledge graph of pulmonary-to-cardiac mechanisms.
//!
//! Nodes sit on four levels (finding, mechanism, effect, consequence) and
//! every edge climbs exactly one level. Edges into the same target that share
//! an `and_group` form a conjunction: the group fires with the minimum of its
//! weighted parents.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::perception::Finding;
use crate::{Error, Result};

const DEFAULT_KB: &str = include_str!("../../assets/default_kb.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Finding,
    Mechanism,
    Effect,
    Consequence,
}

impl Level {
    pub fn rank(self) -> u8 {
        match self {
            Level::Finding => 0,
            Level::Mechanism => 1,
            Level::Effect => 2,
            Level::Consequence => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbNode {
    pub name: String,
    pub level: Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEdge {
    pub from: String,
    pub to: String,
    pub weight: f64,
    pub phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub and_group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KbDocument {
    version: String,
    nodes: Vec<KbNode>,
    edges: Vec<KbEdge>,
}

/// Incoming edge resolved to node indices.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Incoming {
    pub from: usize,
    pub edge: usize,
}

/// A validated, immutable knowledge graph.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    version: String,
    nodes: Vec<KbNode>,
    edges: Vec<KbEdge>,
    // node index -> (or-edges, and-groups)
    pub(crate) or_in: Vec<Vec<Incoming>>,
    pub(crate) and_in: Vec<Vec<Vec<Incoming>>>,
    pub(crate) out: Vec<Vec<usize>>,
    edge_ends: Vec<(usize, usize)>,
    indicator_nodes: Vec<usize>,
}

impl KnowledgeGraph {
    pub fn default_kb() -> Self {
        KnowledgeGraph::from_json(DEFAULT_KB).expect("shipped knowledge base is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: KbDocument = serde_json::from_str(text)
            .map_err(|e| Error::KnowledgeBase(format!("parse error: {e}")))?;
        KnowledgeGraph::build(doc.version, doc.nodes, doc.edges)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&KbDocument {
            version: self.version.clone(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        })?)
    }

    pub fn build(version: String, nodes: Vec<KbNode>, edges: Vec<KbEdge>) -> Result<Self> {
        let kb_err = |m: String| Error::KnowledgeBase(m);
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.name.clone(), i).is_some() {
                return Err(kb_err(format!("duplicate node '{}'", n.name)));
            }
            if n.level == Level::Finding && n.name.parse::<Finding>().is_err() {
                return Err(kb_err(format!("unknown finding node '{}'", n.name)));
            }
        }

        let mut edge_ends = Vec::with_capacity(edges.len());
        for e in &edges {
            let (Some(&f), Some(&t)) = (index.get(&e.from), index.get(&e.to)) else {
                return Err(kb_err(format!("edge {} -> {} names an unknown node", e.from, e.to)));
            };
            if !(e.weight > 0.0 && e.weight <= 1.0) {
                return Err(kb_err(format!(
                    "edge {} -> {} weight {} outside (0, 1]",
                    e.from, e.to, e.weight
                )));
            }
            edge_ends.push((f, t));
        }

        if let Some(node) = find_cycle(nodes.len(), &edge_ends) {
            return Err(kb_err(format!("cycle through '{}'", nodes[node].name)));
        }
        for (e, &(f, t)) in edges.iter().zip(&edge_ends) {
            if nodes[t].level.rank() != nodes[f].level.rank() + 1 {
                return Err(kb_err(format!(
                    "level order violated by edge {} ({:?}) -> {} ({:?})",
                    e.from, nodes[f].level, e.to, nodes[t].level
                )));
            }
        }

        let n = nodes.len();
        let mut or_in: Vec<Vec<Incoming>> = vec![Vec::new(); n];
        let mut groups: Vec<BTreeMap<String, Vec<Incoming>>> = vec![BTreeMap::new(); n];
        let mut out = vec![Vec::new(); n];
        for (ei, (e, &(f, t))) in edges.iter().zip(&edge_ends).enumerate() {
            let inc = Incoming { from: f, edge: ei };
            match &e.and_group {
                Some(g) => groups[t].entry(g.clone()).or_default().push(inc),
                None => or_in[t].push(inc),
            }
            out[f].push(ei);
        }
        for (t, g) in groups.iter().enumerate() {
            for (name, members) in g {
                if members.len() < 2 {
                    return Err(kb_err(format!(
                        "and_group '{name}' into '{}' needs at least two edges",
                        nodes[t].name
                    )));
                }
            }
        }
        let and_in = groups.into_iter().map(|g| g.into_values().collect()).collect();

        let mut indicator_nodes: Vec<usize> =
            (0..n).filter(|&i| nodes[i].level != Level::Finding).collect();
        indicator_nodes.sort_by_key(|&i| (nodes[i].level, i));

        Ok(KnowledgeGraph {
            version,
            nodes,
            edges,
            or_in,
            and_in,
            out,
            edge_ends,
            indicator_nodes,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn nodes(&self) -> &[KbNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[KbEdge] {
        &self.edges
    }

    pub(crate) fn edge_ends(&self, edge: usize) -> (usize, usize) {
        self.edge_ends[edge]
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn finding_nodes(&self) -> impl Iterator<Item = (usize, Finding)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| {
            (n.level == Level::Finding).then(|| (i, n.name.parse().expect("validated")))
        })
    }

    /// Node indices backing the indicator vector, in its fixed order
    /// (by level, then file order).
    pub fn indicator_nodes(&self) -> &[usize] {
        &self.indicator_nodes
    }

    pub fn indicator_names(&self) -> Vec<String> {
        self.indicator_nodes
            .iter()
            .map(|&i| self.nodes[i].name.clone())
            .collect()
    }

    /// Dimension of the reasoning embedding: the number of non-finding nodes.
    pub fn d_reason(&self) -> usize {
        self.indicator_nodes.len()
    }

    pub fn stamp(&self) -> KbStamp {
        KbStamp {
            version: self.version.clone(),
            d_reason: self.d_reason(),
        }
    }
}

/// What a downstream consumer expects of the knowledge base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbStamp {
    pub version: String,
    pub d_reason: usize,
}

fn find_cycle(n: usize, edges: &[(usize, usize)]) -> Option<usize> {
    let mut indeg = vec![0usize; n];
    let mut adj = vec![Vec::new(); n];
    for &(f, t) in edges {
        indeg[t] += 1;
        adj[f].push(t);
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut done = BTreeSet::new();
    while let Some(u) = queue.pop() {
        done.insert(u);
        for &v in &adj[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push(v);
            }
        }
    }
    (0..n).find(|i| !done.contains(i))
}

pub fn load_knowledge_base(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    KnowledgeGraph::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str, level: Level) -> KbNode {
        KbNode { name: name.into(), level }
    }

    fn edge(from: &str, to: &str, weight: f64) -> KbEdge {
        KbEdge { from: from.into(), to: to.into(), weight, phrase: "p".into(), and_group: None }
    }

    #[test]
    fn default_kb_shape() {
        let kb = KnowledgeGraph::default_kb();
        assert_eq!(kb.finding_nodes().count(), 5);
        assert_eq!(kb.d_reason(), 10);
        assert!(kb.node_index("right_ventricular_strain").is_some());
        let levels: Vec<Level> = kb.indicator_nodes().iter().map(|&i| kb.nodes()[i].level).collect();
        assert!(levels.windows(2).all(|w| w[0] <= w[1]));
        // and the text form survives a round trip
        assert_eq!(KnowledgeGraph::from_json(&kb.to_json().unwrap()).unwrap(), kb);
    }

    #[test]
    fn rejects_level_order_violation() {
        let nodes = vec![node("opacity", Level::Finding), node("hypoxemia", Level::Mechanism), node("x", Level::Effect)];
        let err = KnowledgeGraph::build("t".into(), nodes.clone(), vec![edge("hypoxemia", "opacity", 0.5)]).unwrap_err();
        assert!(err.to_string().contains("level order"));
        let err = KnowledgeGraph::build("t".into(), nodes, vec![edge("opacity", "x", 0.5)]).unwrap_err();
        assert!(err.to_string().contains("level order"));
    }

    #[test]
    fn rejects_bad_weights_unknown_findings_and_cycles() {
        let nodes = vec![node("opacity", Level::Finding), node("hypoxemia", Level::Mechanism)];
        assert!(KnowledgeGraph::build("t".into(), nodes.clone(), vec![edge("opacity", "hypoxemia", 0.0)]).is_err());
        assert!(KnowledgeGraph::build("t".into(), nodes.clone(), vec![edge("opacity", "hypoxemia", 1.5)]).is_err());
        let bad = vec![node("edema", Level::Finding)];
        let err = KnowledgeGraph::build("t".into(), bad, vec![]).unwrap_err();
        assert!(err.to_string().contains("unknown finding"));
        let cyc = vec![node("a", Level::Mechanism), node("b", Level::Effect)];
        let err = KnowledgeGraph::build("t".into(), cyc, vec![edge("a", "b", 0.5), edge("b", "a", 0.5)]).unwrap_err();
        assert!(err.to_string().contains("cycle"));
    }

    #[test]
    fn singleton_and_group_is_rejected() {
        let nodes = vec![node("opacity", Level::Finding), node("hypoxemia", Level::Mechanism)];
        let mut e = edge("opacity", "hypoxemia", 0.5);
        e.and_group = Some("g".into());
        assert!(KnowledgeGraph::build("t".into(), nodes, vec![e]).is_err());
    }
}
