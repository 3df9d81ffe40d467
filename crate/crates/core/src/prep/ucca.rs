//! Labels for UCCA implicit (unlabelled) nodes.

use crate::graph::MrpGraph;
use crate::tree::graph_to_tree;

fn is_reserved(label: &str) -> bool {
    label
        .strip_prefix("n_")
        .is_some_and(|k| !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()))
}

/// Node ids in node-sequence order, falling back to graph order for nodes
/// the traversal does not reach.
fn sequence_order(g: &MrpGraph) -> Vec<u32> {
    let mut order = Vec::new();
    if let Ok(seq) = graph_to_tree(g) {
        for n in &seq.nodes {
            if let Some(id) = n.source_id {
                if !order.contains(&id) {
                    order.push(id);
                }
            }
        }
    }
    for n in &g.nodes {
        if !order.contains(&n.id) {
            order.push(n.id);
        }
    }
    order
}

/// Give every unlabelled node the label `n_i`, `i` counting unlabelled nodes
/// in sequence order. Genuine labels that look reserved, or start with a
/// backslash, are escaped with a leading backslash.
pub fn ucca_mark_implicit(g: &MrpGraph) -> MrpGraph {
    let mut out = g.clone();
    for n in &mut out.nodes {
        if let Some(label) = &n.label {
            if is_reserved(label) || label.starts_with('\\') {
                n.label = Some(format!("\\{label}"));
            }
        }
    }
    let mut k = 0;
    for id in sequence_order(g) {
        let n = out.node_mut(id).expect("exists");
        if n.label.is_none() {
            n.label = Some(format!("n_{k}"));
            k += 1;
        }
    }
    out
}

/// Inverse of [`ucca_mark_implicit`].
pub fn ucca_strip_implicit(g: &MrpGraph) -> MrpGraph {
    let mut out = g.clone();
    for n in &mut out.nodes {
        let Some(label) = &n.label else { continue };
        if is_reserved(label) {
            n.label = None;
        } else if let Some(rest) = label.strip_prefix('\\') {
            n.label = Some(rest.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Framework, MrpEdge, MrpNode};

    fn unlabelled(id: u32) -> MrpNode {
        let mut n = MrpNode::new(id, "");
        n.label = None;
        n
    }

    fn sample() -> MrpGraph {
        // sequence: 0 (root), 3, 1, 2, 4
        let mut g = MrpGraph::new("u", Framework::Ucca, "a b");
        g.nodes.push(MrpNode::new(0, "H"));
        g.nodes.push(MrpNode::new(1, "P"));
        g.nodes.push(unlabelled(2));
        g.nodes.push(unlabelled(3));
        g.nodes.push(MrpNode::new(4, "n_3"));
        g.tops = vec![0];
        g.edges.push(MrpEdge::new(0, 3, "A"));
        g.edges.push(MrpEdge::new(0, 1, "B"));
        g.edges.push(MrpEdge::new(1, 4, "C"));
        g.edges.push(MrpEdge::new(1, 2, "D"));
        g
    }

    #[test]
    fn labels_follow_sequence_order() {
        let g = sample();
        let seq = graph_to_tree(&g).unwrap();
        assert_eq!(seq.nodes.iter().map(|n| n.source_id.unwrap()).collect::<Vec<_>>(), [0, 3, 1, 2, 4]);
        let m = ucca_mark_implicit(&g);
        assert_eq!(m.node(3).unwrap().label_str(), "n_0");
        assert_eq!(m.node(2).unwrap().label_str(), "n_1");
        assert_eq!(m.node(4).unwrap().label_str(), "\\n_3");
        assert_eq!(ucca_strip_implicit(&m), g);
    }

    #[test]
    fn nothing_unlabelled_is_unchanged() {
        let mut g = MrpGraph::new("u", Framework::Ucca, "");
        g.nodes.push(MrpNode::new(0, "H"));
        g.tops = vec![0];
        assert_eq!(ucca_mark_implicit(&g), g);
    }

    #[test]
    fn disconnected_graph_uses_node_order() {
        let mut g = MrpGraph::new("u", Framework::Ucca, "");
        g.nodes.push(unlabelled(5));
        g.nodes.push(unlabelled(2));
        let m = ucca_mark_implicit(&g);
        assert_eq!(m.nodes[0].label_str(), "n_0");
        assert_eq!(m.nodes[1].label_str(), "n_1");
        assert_eq!(ucca_strip_implicit(&m), g);
    }
}
