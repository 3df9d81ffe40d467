//! Graph data model for the five MRP frameworks, line-delimited MRP
//! reading and writing, companion-data ingestion and structural validation.

mod companion;
mod io;
pub mod iso;
mod validate;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fmt;
use std::str::FromStr;

pub use companion::{
    align_companion, attach_ner, read_companion, read_ner_sidecar, write_companion, AlignError, CompanionError, CompanionSentence,
    CompanionToken, Gazetteer,
};
pub use io::{parse_mrp, read_mrp_lines, serialize_mrp, MrpError};
pub use validate::{validate_graph, Violation, ViolationCode};

/// The five supported meaning-representation frameworks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Dm,
    Psd,
    Eds,
    Ucca,
    Amr,
}

impl Framework {
    pub const ALL: [Framework; 5] = [Framework::Dm, Framework::Psd, Framework::Eds, Framework::Ucca, Framework::Amr];

    pub fn as_str(self) -> &'static str {
        match self {
            Framework::Dm => "dm",
            Framework::Psd => "psd",
            Framework::Eds => "eds",
            Framework::Ucca => "ucca",
            Framework::Amr => "amr",
        }
    }

    /// DM and PSD: one graph node per surface token.
    pub fn is_bilexical(self) -> bool {
        matches!(self, Framework::Dm | Framework::Psd)
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Framework {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dm" => Ok(Framework::Dm),
            "psd" => Ok(Framework::Psd),
            "eds" => Ok(Framework::Eds),
            "ucca" => Ok(Framework::Ucca),
            "amr" => Ok(Framework::Amr),
            other => Err(format!("unknown framework `{other}`")),
        }
    }
}

/// Half-open character range `[from, to)` into the graph input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Anchor {
    pub from: usize,
    pub to: usize,
}

impl Anchor {
    pub fn new(from: usize, to: usize) -> Self {
        Anchor { from, to }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MrpNode {
    pub id: u32,
    pub label: Option<String>,
    pub properties: Vec<(String, String)>,
    pub anchors: Option<Vec<Anchor>>,
    /// Unrecognised record keys, kept verbatim.
    pub extras: Map<String, Value>,
}

impl MrpNode {
    pub fn new(id: u32, label: impl Into<String>) -> Self {
        MrpNode {
            id,
            label: Some(label.into()),
            ..Default::default()
        }
    }

    pub fn with_anchor(mut self, from: usize, to: usize) -> Self {
        self.anchors.get_or_insert_with(Vec::new).push(Anchor::new(from, to));
        self
    }

    pub fn with_property(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.properties.push((name.into(), value.into()));
        self
    }

    pub fn property(&self, name: &str) -> Option<&str> {
        self.properties.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn label_str(&self) -> &str {
        self.label.as_deref().unwrap_or("")
    }

    /// Smallest anchor covering all anchor pieces.
    pub fn anchor_range(&self) -> Option<Anchor> {
        let anchors = self.anchors.as_ref()?;
        let from = anchors.iter().map(|a| a.from).min()?;
        let to = anchors.iter().map(|a| a.to).max()?;
        Some(Anchor { from, to })
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MrpEdge {
    pub source: u32,
    pub target: u32,
    pub label: String,
    pub attributes: Vec<(String, Value)>,
    pub extras: Map<String, Value>,
}

impl MrpEdge {
    pub fn new(source: u32, target: u32, label: impl Into<String>) -> Self {
        MrpEdge {
            source,
            target,
            label: label.into(),
            ..Default::default()
        }
    }

    pub fn with_attribute(mut self, name: impl Into<String>, value: Value) -> Self {
        self.attributes.push((name.into(), value));
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MrpGraph {
    pub id: String,
    pub framework: Framework,
    pub input: String,
    pub tops: Vec<u32>,
    pub nodes: Vec<MrpNode>,
    pub edges: Vec<MrpEdge>,
    /// Top-level keys other than the modelled ones (flavor, version, time, ...).
    pub extras: Map<String, Value>,
}

impl MrpGraph {
    pub fn new(id: impl Into<String>, framework: Framework, input: impl Into<String>) -> Self {
        MrpGraph {
            id: id.into(),
            framework,
            input: input.into(),
            tops: Vec::new(),
            nodes: Vec::new(),
            edges: Vec::new(),
            extras: Map::new(),
        }
    }

    pub fn node(&self, id: u32) -> Option<&MrpNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: u32) -> Option<&mut MrpNode> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    pub fn node_index(&self, id: u32) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn next_node_id(&self) -> u32 {
        self.nodes.iter().map(|n| n.id + 1).max().unwrap_or(0)
    }

    /// Number of edges touching `id` in either direction.
    pub fn degree(&self, id: u32) -> usize {
        self.edges.iter().filter(|e| e.source == id || e.target == id).count()
    }

    pub fn in_degree(&self, id: u32) -> usize {
        self.edges.iter().filter(|e| e.target == id).count()
    }

    pub fn remove_node(&mut self, id: u32) {
        self.nodes.retain(|n| n.id != id);
        self.edges.retain(|e| e.source != id && e.target != id);
        self.tops.retain(|&t| t != id);
    }

    /// Character length of `input`; anchors are measured in characters.
    pub fn input_len(&self) -> usize {
        self.input.chars().count()
    }

    /// Substring of `input` covered by a character anchor.
    pub fn anchored_text(&self, anchor: Anchor) -> String {
        char_slice(&self.input, anchor.from, anchor.to)
    }
}

/// Character-indexed substring; out-of-range bounds are clamped.
pub fn char_slice(s: &str, from: usize, to: usize) -> String {
    s.chars().skip(from).take(to.saturating_sub(from)).collect()
}
