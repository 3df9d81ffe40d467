//! EDS node reduction and its inverse.
//!
//! Type-1 nodes (no direct surface token) are removed in two ways:
//!
//! 1. a type-1 node with a single incident edge, to a type-2 node with the
//!    same anchor, becomes a `reduced:<k>` property of that node;
//! 2. a type-1 node with exactly two outgoing edges, to type-2 nodes whose
//!    combined anchor equals its own, becomes an edge between them whose
//!    label starts with `reduced:`. The endpoint of the `ARG1` edge is the
//!    source and the `ARG2` endpoint the target; for other label pairs the
//!    lexicographically smaller label marks the source.
//!
//! Rule 1 runs to exhaustion before rule 2 on every pass, and passes repeat
//! until nothing changes.

use thiserror::Error;

use super::{join_fields, split_fields};
use crate::graph::{Anchor, MrpEdge, MrpGraph, MrpNode};

pub const REDUCED_PREFIX: &str = "reduced:";

#[derive(Debug, Error, PartialEq)]
pub enum RestoreError {
    #[error("node {node}: unrecognised reduced attribute `{name}` = `{value}`")]
    Attribute { node: u32, name: String, value: String },
    #[error("edge {from}->{to}: unrecognised reduced label `{label}`")]
    EdgeLabel { from: u32, to: u32, label: String },
}

fn sorted_anchors(n: &MrpNode) -> Option<Vec<Anchor>> {
    n.anchors.clone().map(|mut a| {
        a.sort();
        a
    })
}

/// Type-2 test: the label is a surface predicate (`_` prefix) or equals the
/// anchored text, case-insensitively.
pub fn is_surface_node(g: &MrpGraph, n: &MrpNode) -> bool {
    let label = n.label_str();
    if label.starts_with('_') {
        return true;
    }
    match n.anchor_range() {
        Some(a) if !label.is_empty() => g.anchored_text(a).trim().to_lowercase() == label.to_lowercase(),
        _ => false,
    }
}

fn reduce_rule1(g: &mut MrpGraph) -> bool {
    let ids: Vec<u32> = g.nodes.iter().map(|n| n.id).collect();
    let mut changed = false;
    for a_id in ids {
        let Some(a) = g.node(a_id) else { continue };
        if g.tops.contains(&a_id) || is_surface_node(g, a) || a.anchors.is_none() {
            continue;
        }
        let incident: Vec<usize> = (0..g.edges.len())
            .filter(|&i| g.edges[i].source == a_id || g.edges[i].target == a_id)
            .collect();
        let [e] = incident[..] else { continue };
        let edge = &g.edges[e];
        let (b_id, dir) = if edge.source == a_id {
            (edge.target, "out")
        } else {
            (edge.source, "in")
        };
        let b = g.node(b_id).expect("validated edge");
        if !is_surface_node(g, b) || sorted_anchors(a) != sorted_anchors(b) {
            continue;
        }
        let mut fields = vec![a.label_str().to_string(), edge.label.clone(), dir.to_string()];
        for (k, v) in &a.properties {
            fields.push(k.clone());
            fields.push(v.clone());
        }
        let value = join_fields(&fields);
        let b = g.node_mut(b_id).expect("exists");
        let slot = (0..)
            .find(|k| b.property(&format!("{REDUCED_PREFIX}{k}")).is_none())
            .expect("unbounded");
        b.properties.push((format!("{REDUCED_PREFIX}{slot}"), value));
        g.remove_node(a_id);
        changed = true;
    }
    changed
}

fn reduce_rule2(g: &mut MrpGraph) -> bool {
    let ids: Vec<u32> = g.nodes.iter().map(|n| n.id).collect();
    let mut changed = false;
    for a_id in ids {
        let Some(a) = g.node(a_id) else { continue };
        if g.tops.contains(&a_id) || is_surface_node(g, a) || !a.properties.is_empty() {
            continue;
        }
        let Some(a_anchors) = &a.anchors else { continue };
        if a_anchors.len() != 1 {
            continue;
        }
        let incident: Vec<usize> = (0..g.edges.len())
            .filter(|&i| g.edges[i].source == a_id || g.edges[i].target == a_id)
            .collect();
        let [e1, e2] = incident[..] else { continue };
        let (x, y) = (&g.edges[e1], &g.edges[e2]);
        if x.source != a_id || y.source != a_id || x.target == y.target || x.label == y.label {
            continue;
        }
        let (src, tgt) = if x.label == "ARG1" && y.label == "ARG2" {
            (x, y)
        } else if y.label == "ARG1" && x.label == "ARG2" {
            (y, x)
        } else if x.label < y.label {
            (x, y)
        } else {
            (y, x)
        };
        let (b, c) = (g.node(src.target).expect("edge"), g.node(tgt.target).expect("edge"));
        if !is_surface_node(g, b) || !is_surface_node(g, c) {
            continue;
        }
        let (Some(rb), Some(rc)) = (b.anchor_range(), c.anchor_range()) else {
            continue;
        };
        let combined = Anchor::new(rb.from.min(rc.from), rb.to.max(rc.to));
        if a_anchors[0] != combined {
            continue;
        }
        let label = format!("{REDUCED_PREFIX}{}", join_fields(&[a.label_str(), &src.label, &tgt.label]));
        let new_edge = MrpEdge::new(b.id, c.id, label);
        g.remove_node(a_id);
        g.edges.push(new_edge);
        changed = true;
    }
    changed
}

/// Apply both reduction rules to a fixpoint.
pub fn eds_reduce(g: &MrpGraph) -> MrpGraph {
    let mut out = g.clone();
    loop {
        let mut changed = false;
        while reduce_rule1(&mut out) {
            changed = true;
        }
        changed |= reduce_rule2(&mut out);
        if !changed {
            return out;
        }
    }
}

/// Recreate the nodes removed by [`eds_reduce`].
pub fn eds_restore(g: &MrpGraph) -> Result<MrpGraph, RestoreError> {
    let mut out = g.clone();
    let mut next = out.next_node_id();

    let reduced_edges: Vec<usize> = (0..out.edges.len())
        .filter(|&i| out.edges[i].label.starts_with(REDUCED_PREFIX))
        .collect();
    let mut new_nodes = Vec::new();
    let mut new_edges = Vec::new();
    for &i in &reduced_edges {
        let e = &out.edges[i];
        let fields = split_fields(&e.label[REDUCED_PREFIX.len()..]);
        let Some([label, src_label, tgt_label]) = fields.as_deref() else {
            return Err(RestoreError::EdgeLabel {
                from: e.source,
                to: e.target,
                label: e.label.clone(),
            });
        };
        let mut node = MrpNode::new(next, label.clone());
        let ranges: Vec<Anchor> = [e.source, e.target]
            .iter()
            .filter_map(|id| out.node(*id).and_then(MrpNode::anchor_range))
            .collect();
        if let (Some(from), Some(to)) = (ranges.iter().map(|a| a.from).min(), ranges.iter().map(|a| a.to).max()) {
            node.anchors = Some(vec![Anchor::new(from, to)]);
        }
        new_edges.push(MrpEdge::new(next, e.source, src_label.clone()));
        new_edges.push(MrpEdge::new(next, e.target, tgt_label.clone()));
        new_nodes.push(node);
        next += 1;
    }
    let mut k = 0;
    out.edges.retain(|_| {
        let keep = !reduced_edges.contains(&k);
        k += 1;
        keep
    });

    for idx in 0..out.nodes.len() {
        let b_id = out.nodes[idx].id;
        let b_anchors = out.nodes[idx].anchors.clone();
        let (reduced, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut out.nodes[idx].properties)
            .into_iter()
            .partition(|(name, _)| name.starts_with(REDUCED_PREFIX));
        out.nodes[idx].properties = kept;
        for (name, value) in reduced {
            let bad = || RestoreError::Attribute {
                node: b_id,
                name: name.clone(),
                value: value.clone(),
            };
            if name[REDUCED_PREFIX.len()..].parse::<u32>().is_err() {
                return Err(bad());
            }
            let fields = split_fields(&value).ok_or_else(bad)?;
            if fields.len() < 3 || fields.len() % 2 == 0 {
                return Err(bad());
            }
            let mut node = MrpNode::new(next, fields[0].clone());
            node.anchors = b_anchors.clone();
            node.properties = fields[3..].chunks(2).map(|kv| (kv[0].clone(), kv[1].clone())).collect();
            let edge = match fields[2].as_str() {
                "out" => MrpEdge::new(next, b_id, fields[1].clone()),
                "in" => MrpEdge::new(b_id, next, fields[1].clone()),
                _ => return Err(bad()),
            };
            new_nodes.push(node);
            new_edges.push(edge);
            next += 1;
        }
    }
    out.nodes.extend(new_nodes);
    out.edges.extend(new_edges);
    Ok(out)
}
