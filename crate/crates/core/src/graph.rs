//! Concept-graph export: a JSON-friendly node/edge list, Graphviz DOT text,
//! and the input/rules/output table of a single frame.

use serde::{Deserialize, Serialize};

use crate::kb::KnowledgeBase;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Concept,
    Class,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphNode {
    /// Concept name, or `concept/class` for classes.
    pub id: String,
    pub label: String,
    pub kind: NodeKind,
    /// Owning concept of a class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Frame,
    Subconcept,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub target: String,
    /// Verb name for frames; empty for composition links.
    pub label: String,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl GraphExport {
    /// Concepts and classes as nodes; frames and composition links as
    /// edges. Order follows the knowledge base's name keys.
    pub fn from_kb(kb: &KnowledgeBase) -> Self {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for c in kb.concepts() {
            nodes.push(GraphNode { id: c.name.clone(), label: c.name.clone(), kind: NodeKind::Concept, concept: None });
            for class in c.classes.values() {
                nodes.push(GraphNode {
                    id: format!("{}/{}", c.name, class.name),
                    label: class.name.clone(),
                    kind: NodeKind::Class,
                    concept: Some(c.name.clone()),
                });
            }
            for s in &c.subconcepts {
                edges.push(GraphEdge {
                    source: c.name.clone(),
                    target: s.clone(),
                    label: String::new(),
                    kind: EdgeKind::Subconcept,
                });
            }
        }
        for f in kb.frames() {
            edges.push(GraphEdge {
                source: f.source.clone(),
                target: f.target.clone(),
                label: f.name.clone(),
                kind: EdgeKind::Frame,
            });
        }
        GraphExport { nodes, edges }
    }

    pub fn node_ids(&self) -> std::collections::BTreeSet<String> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }

    /// `(source, target, label)` triples.
    pub fn edge_triples(&self) -> std::collections::BTreeSet<(String, String, String)> {
        self.edges.iter().map(|e| (e.source.clone(), e.target.clone(), e.label.clone())).collect()
    }
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz text of the concept graph. Each concept is a cluster holding
/// its classes; frames are solid labelled edges, composition links dashed.
pub fn export_dot(kb: &KnowledgeBase) -> String {
    let graph = GraphExport::from_kb(kb);
    let mut out = String::from("digraph kb {\n");
    for (i, c) in kb.concepts().enumerate() {
        if c.classes.is_empty() {
            out.push_str(&format!("  {} [shape=box];\n", dot_id(&c.name)));
            continue;
        }
        out.push_str(&format!("  subgraph cluster_{i} {{\n    label={};\n", dot_id(&c.name)));
        out.push_str(&format!("    {} [shape=box];\n", dot_id(&c.name)));
        for n in graph.nodes.iter().filter(|n| n.concept.as_deref() == Some(c.name.as_str())) {
            out.push_str(&format!("    {} [label={}, shape=ellipse];\n", dot_id(&n.id), dot_id(&n.label)));
        }
        out.push_str("  }\n");
    }
    for e in &graph.edges {
        match e.kind {
            EdgeKind::Frame => out.push_str(&format!(
                "  {} -> {} [label={}];\n",
                dot_id(&e.source),
                dot_id(&e.target),
                dot_id(&e.label)
            )),
            EdgeKind::Subconcept => out.push_str(&format!(
                "  {} -> {} [style=dashed, arrowhead=diamond];\n",
                dot_id(&e.source),
                dot_id(&e.target)
            )),
        }
    }
    out.push_str("}\n");
    out
}

/// One column entry of a frame table: a feature and its values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub feature: String,
    pub values: Vec<String>,
}

impl FeatureColumn {
    /// `Owns glasses: Yes, No`
    pub fn render(&self) -> String {
        if self.values.is_empty() {
            self.feature.clone()
        } else {
            format!("{}: {}", self.feature, self.values.join(", "))
        }
    }
}

/// The Input / Rules / Output view of a frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTable {
    pub name: String,
    pub source: String,
    pub target: String,
    pub inputs: Vec<FeatureColumn>,
    pub rules: Vec<String>,
    pub outputs: Vec<FeatureColumn>,
    pub externals: Vec<FeatureColumn>,
}

impl FrameTable {
    pub fn of(kb: &KnowledgeBase, frame: &str) -> Option<FrameTable> {
        let f = kb.frame(frame)?;
        let columns = |list: &[String]| {
            list.iter()
                .map(|name| {
                    let values = kb.feature(name).map(|d| match &d.numeric {
                        Some(n) => vec![n.unit.clone()],
                        None => d.domain.clone(),
                    });
                    FeatureColumn { feature: name.clone(), values: values.unwrap_or_default() }
                })
                .collect()
        };
        Some(FrameTable {
            name: f.name.clone(),
            source: f.source.clone(),
            target: f.target.clone(),
            inputs: columns(&f.inputs),
            rules: f.rules.iter().map(ToString::to_string).collect(),
            outputs: columns(&f.outputs),
            externals: columns(&f.externals),
        })
    }

    /// Plain-text rendering: a heading and one line per column entry.
    pub fn render(&self) -> String {
        let mut out = format!("{}: {} to {} (frame)\n", self.name, self.source, self.target);
        for c in &self.inputs {
            out.push_str(&format!("Input    {}\n", c.render()));
        }
        for c in &self.externals {
            out.push_str(&format!("External {}\n", c.render()));
        }
        for r in &self.rules {
            out.push_str(&format!("Rule     {r}\n"));
        }
        for c in &self.outputs {
            out.push_str(&format!("Output   {}\n", c.render()));
        }
        out
    }
}
