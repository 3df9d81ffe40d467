use serde::Serialize;
use std::collections::HashSet;

use super::MrpGraph;

/// Machine-readable violation kinds reported by [`validate_graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ViolationCode {
    DuplicateNodeId,
    DanglingEdge,
    DanglingTop,
    SelfLoop,
    InvertedAnchor,
    AnchorOutOfBounds,
    DuplicateProperty,
    /// DM/PSD node whose anchor spans more than one whitespace token.
    MultiTokenAnchor,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub node: Option<u32>,
    pub edge: Option<usize>,
    pub message: String,
}

impl Violation {
    fn node(code: ViolationCode, node: u32, message: String) -> Self {
        Violation {
            code,
            node: Some(node),
            edge: None,
            message,
        }
    }

    fn edge(code: ViolationCode, edge: usize, message: String) -> Self {
        Violation {
            code,
            node: None,
            edge: Some(edge),
            message,
        }
    }
}

/// Check the structural invariants of a graph. Violations are returned as
/// data, in a deterministic order; an empty list means the graph is valid.
pub fn validate_graph(g: &MrpGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for n in &g.nodes {
        if !ids.insert(n.id) {
            out.push(Violation::node(
                ViolationCode::DuplicateNodeId,
                n.id,
                format!("node id {} appears more than once", n.id),
            ));
        }
    }
    for (i, e) in g.edges.iter().enumerate() {
        for end in [e.source, e.target] {
            if !ids.contains(&end) {
                out.push(Violation::edge(
                    ViolationCode::DanglingEdge,
                    i,
                    format!("edge {i} references missing node {end}"),
                ));
            }
        }
        if e.source == e.target {
            out.push(Violation::edge(
                ViolationCode::SelfLoop,
                i,
                format!("edge {i} is a self-loop on node {}", e.source),
            ));
        }
    }
    for &t in &g.tops {
        if !ids.contains(&t) {
            out.push(Violation {
                code: ViolationCode::DanglingTop,
                node: Some(t),
                edge: None,
                message: format!("top {t} references a missing node"),
            });
        }
    }
    let len = g.input_len();
    let chars: Vec<char> = g.input.chars().collect();
    for n in &g.nodes {
        let mut seen = HashSet::new();
        for (name, _) in &n.properties {
            if !seen.insert(name.as_str()) {
                out.push(Violation::node(
                    ViolationCode::DuplicateProperty,
                    n.id,
                    format!("node {} repeats property `{name}`", n.id),
                ));
            }
        }
        for a in n.anchors.iter().flatten() {
            if a.from > a.to {
                out.push(Violation::node(
                    ViolationCode::InvertedAnchor,
                    n.id,
                    format!("node {} anchor {}..{} is inverted", n.id, a.from, a.to),
                ));
            } else if a.to > len {
                out.push(Violation::node(
                    ViolationCode::AnchorOutOfBounds,
                    n.id,
                    format!("node {} anchor ends at {} beyond input length {len}", n.id, a.to),
                ));
            } else if g.framework.is_bilexical() {
                let span = &chars[a.from..a.to];
                if span.is_empty() || span.iter().any(|c| c.is_whitespace()) {
                    out.push(Violation::node(
                        ViolationCode::MultiTokenAnchor,
                        n.id,
                        format!("node {} anchor does not cover exactly one token", n.id),
                    ));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Anchor, Framework, MrpEdge, MrpNode};

    fn base() -> MrpGraph {
        let mut g = MrpGraph::new("t", Framework::Dm, "the dog");
        g.nodes.push(MrpNode::new(0, "the").with_anchor(0, 3));
        g.nodes.push(MrpNode::new(1, "dog").with_anchor(4, 7));
        g.edges.push(MrpEdge::new(0, 1, "BV"));
        g.tops.push(1);
        g
    }

    #[test]
    fn valid_graph_has_no_violations() {
        assert!(validate_graph(&base()).is_empty());
    }

    #[test]
    fn dangling_edge() {
        let mut g = base();
        g.edges.push(MrpEdge::new(0, 99, "x"));
        let v = validate_graph(&g);
        assert_eq!(v.iter().map(|v| v.code).collect::<Vec<_>>(), vec![ViolationCode::DanglingEdge]);
    }

    #[test]
    fn inverted_anchor() {
        let mut g = base();
        g.nodes[0].anchors = Some(vec![Anchor::new(3, 1)]);
        let v = validate_graph(&g);
        assert_eq!(v.iter().map(|v| v.code).collect::<Vec<_>>(), vec![ViolationCode::InvertedAnchor]);
    }

    #[test]
    fn other_codes() {
        let mut g = base();
        g.nodes.push(MrpNode::new(1, "dup"));
        g.edges.push(MrpEdge::new(0, 0, "loop"));
        g.tops.push(7);
        g.nodes[0].properties = vec![("pos".into(), "DT".into()), ("pos".into(), "X".into())];
        g.nodes[1].anchors = Some(vec![Anchor::new(0, 7)]);
        let codes: HashSet<_> = validate_graph(&g).into_iter().map(|v| v.code).collect();
        for c in [
            ViolationCode::DuplicateNodeId,
            ViolationCode::SelfLoop,
            ViolationCode::DanglingTop,
            ViolationCode::DuplicateProperty,
            ViolationCode::MultiTokenAnchor,
        ] {
            assert!(codes.contains(&c), "{c:?} missing");
        }
    }

    #[test]
    fn validation_is_pure() {
        let mut g = base();
        g.edges.push(MrpEdge::new(5, 6, "x"));
        assert_eq!(validate_graph(&g), validate_graph(&g));
    }
}
