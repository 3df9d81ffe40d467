//! Conversion between reentrant graphs and node sequences.
//!
//! A graph is linearised by depth-first search from its top; a node reached
//! a second time is emitted again as a copy that carries the `idx` of its
//! first occurrence. Restoring merges all positions sharing an `idx`.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use thiserror::Error;

use crate::graph::{Framework, MrpEdge, MrpGraph, MrpNode};
use crate::prep::TokenSpan;

/// Label of the synthetic root inserted when a graph has several tops.
pub const VIRTUAL_ROOT: &str = "<ROOT>";

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SeqNode {
    pub label: Option<String>,
    /// Position of the first occurrence of this node (own position if original).
    pub idx: usize,
    pub parent: Option<usize>,
    pub incoming_label: Option<String>,
    /// The tree edge runs against the graph edge (child → parent in the graph).
    pub reversed: bool,
    pub properties: Vec<(String, String)>,
    pub anchors: Option<TokenSpan>,
    pub source_id: Option<u32>,
}

impl SeqNode {
    pub fn label_str(&self) -> &str {
        self.label.as_deref().unwrap_or("")
    }

    pub fn is_copy(&self, position: usize) -> bool {
        self.idx != position
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSequence {
    pub id: String,
    pub framework: Framework,
    pub input: String,
    pub nodes: Vec<SeqNode>,
}

impl NodeSequence {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.nodes.iter().map(SeqNode::label_str).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.idx).collect()
    }

    /// Positions of original (non-copy) nodes, in order.
    pub fn originals(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&t| self.nodes[t].idx == t).collect()
    }

    /// Check the `idx`/`parent` invariants.
    pub fn check(&self) -> Result<(), TreeError> {
        for (t, n) in self.nodes.iter().enumerate() {
            if n.idx > t {
                return Err(TreeError::ForwardIndex { position: t, idx: n.idx });
            }
            if n.idx < t && self.nodes[n.idx].idx != n.idx {
                return Err(TreeError::CopyOfCopy { position: t, idx: n.idx });
            }
            if let Some(p) = n.parent {
                if p >= t {
                    return Err(TreeError::ForwardParent { position: t, parent: p });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("graph `{0}` has no nodes")]
    Empty(String),
    #[error("graph `{0}` has no top node")]
    NoTop(String),
    #[error("graph `{id}` is disconnected; unreachable nodes {unreachable:?}")]
    Disconnected { id: String, unreachable: Vec<u32> },
    #[error("sequence is empty; no root")]
    NoRoot,
    #[error("position {position} has idx {idx} pointing forward")]
    ForwardIndex { position: usize, idx: usize },
    #[error("position {position} copies position {idx}, which is itself a copy")]
    CopyOfCopy { position: usize, idx: usize },
    #[error("position {position} has parent {parent} at or after itself")]
    ForwardParent { position: usize, parent: usize },
}

fn digit_run(s: &str) -> bool {
    s.as_bytes().first().is_some_and(u8::is_ascii_digit)
}

fn segments(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut prev: Option<bool> = None;
    for (i, c) in s.char_indices() {
        let d = c.is_ascii_digit();
        if prev.is_some_and(|p| p != d) {
            out.push(&s[start..i]);
            start = i;
        }
        prev = Some(d);
    }
    if start < s.len() {
        out.push(&s[start..]);
    }
    out
}

/// Lexicographic order in which digit runs compare numerically, so that
/// `x2 < x10`.
pub fn alnum_cmp(a: &str, b: &str) -> Ordering {
    let (sa, sb) = (segments(a), segments(b));
    for (x, y) in sa.iter().zip(&sb) {
        let ord = if digit_run(x) && digit_run(y) {
            let (tx, ty) = (x.trim_start_matches('0'), y.trim_start_matches('0'));
            tx.len().cmp(&ty.len()).then_with(|| tx.cmp(ty)).then_with(|| x.len().cmp(&y.len()))
        } else {
            x.cmp(y)
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    sa.len().cmp(&sb.len())
}

struct Walk<'g> {
    g: &'g MrpGraph,
    labels: HashMap<u32, &'g str>,
    out_edges: HashMap<u32, Vec<usize>>,
    in_edges: HashMap<u32, Vec<usize>>,
    forward_reachable: HashSet<u32>,
    traversed: Vec<bool>,
    first_position: HashMap<u32, usize>,
    nodes: Vec<SeqNode>,
}

impl Walk<'_> {
    fn emit(&mut self, id: u32, parent: Option<usize>, edge: Option<(usize, bool)>) -> (usize, bool) {
        let position = self.nodes.len();
        let (incoming_label, reversed) = match edge {
            Some((e, rev)) => (Some(self.g.edges[e].label.clone()), rev),
            None => (None, false),
        };
        if let Some(&first) = self.first_position.get(&id) {
            let label = self.nodes[first].label.clone();
            self.nodes.push(SeqNode {
                label,
                idx: first,
                parent,
                incoming_label,
                reversed,
                source_id: Some(id),
                ..Default::default()
            });
            return (position, false);
        }
        let node = self.g.node(id).expect("edge endpoints validated");
        self.first_position.insert(id, position);
        self.nodes.push(SeqNode {
            label: node.label.clone(),
            idx: position,
            parent,
            incoming_label,
            reversed,
            properties: node.properties.clone(),
            anchors: None,
            source_id: Some(id),
        });
        (position, true)
    }

    fn visit(&mut self, id: u32, position: usize) {
        // (child, edge index, reversed)
        let mut candidates: Vec<(u32, usize, bool)> = Vec::new();
        for &e in self.out_edges.get(&id).into_iter().flatten() {
            candidates.push((self.g.edges[e].target, e, false));
        }
        for &e in self.in_edges.get(&id).into_iter().flatten() {
            let src = self.g.edges[e].source;
            if !self.forward_reachable.contains(&src) {
                candidates.push((src, e, true));
            }
        }
        candidates.sort_by(|a, b| {
            alnum_cmp(self.labels[&a.0], self.labels[&b.0])
                .then(a.0.cmp(&b.0))
                .then_with(|| alnum_cmp(&self.g.edges[a.1].label, &self.g.edges[b.1].label))
                .then(a.2.cmp(&b.2))
                .then(a.1.cmp(&b.1))
        });
        for (child, e, reversed) in candidates {
            if self.traversed[e] {
                continue;
            }
            if reversed && self.first_position.contains_key(&child) {
                // Still pending on the source's own outgoing list.
                continue;
            }
            self.traversed[e] = true;
            let (pos, fresh) = self.emit(child, Some(position), Some((e, reversed)));
            if fresh {
                self.visit(child, pos);
            }
        }
    }
}

/// Linearise a graph into a node sequence by depth-first search from its top.
///
/// Children are visited in [`alnum_cmp`] order of their labels, ties broken
/// by node id. Every edge is traversed once; reaching a visited node emits a
/// copy. Nodes not reachable along edge direction are reached against it
/// (marked `reversed`). Several tops are joined under a [`VIRTUAL_ROOT`].
pub fn graph_to_tree(g: &MrpGraph) -> Result<NodeSequence, TreeError> {
    if g.nodes.is_empty() {
        return Err(TreeError::Empty(g.id.clone()));
    }
    let mut work;
    let g = match g.tops.len() {
        0 => return Err(TreeError::NoTop(g.id.clone())),
        1 => g,
        _ => {
            work = g.clone();
            let root = work.next_node_id();
            work.nodes.push(MrpNode::new(root, VIRTUAL_ROOT));
            for &t in &g.tops {
                work.edges.push(MrpEdge::new(root, t, ""));
            }
            work.tops = vec![root];
            &work
        }
    };
    let root = g.tops[0];
    let mut out_edges: HashMap<u32, Vec<usize>> = HashMap::new();
    let mut in_edges: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, e) in g.edges.iter().enumerate() {
        out_edges.entry(e.source).or_default().push(i);
        in_edges.entry(e.target).or_default().push(i);
    }
    let mut forward_reachable = HashSet::from([root]);
    let mut stack = vec![root];
    while let Some(u) = stack.pop() {
        for &e in out_edges.get(&u).into_iter().flatten() {
            let v = g.edges[e].target;
            if forward_reachable.insert(v) {
                stack.push(v);
            }
        }
    }
    let mut walk = Walk {
        g,
        labels: g.nodes.iter().map(|n| (n.id, n.label_str())).collect(),
        out_edges,
        in_edges,
        forward_reachable,
        traversed: vec![false; g.edges.len()],
        first_position: HashMap::new(),
        nodes: Vec::new(),
    };
    walk.emit(root, None, None);
    walk.visit(root, 0);
    let mut unreachable: Vec<u32> = g
        .nodes
        .iter()
        .map(|n| n.id)
        .filter(|id| !walk.first_position.contains_key(id))
        .collect();
    if !unreachable.is_empty() {
        unreachable.sort_unstable();
        return Err(TreeError::Disconnected {
            id: g.id.clone(),
            unreachable,
        });
    }
    Ok(NodeSequence {
        id: g.id.clone(),
        framework: g.framework,
        input: g.input.clone(),
        nodes: walk.nodes,
    })
}

/// Rebuild a graph from a node sequence: positions sharing an `idx` become
/// one node, parent links become edges. Node ids are assigned in order of
/// first occurrence; a leading [`VIRTUAL_ROOT`] is dropped and its children
/// become the tops.
pub fn tree_to_graph(s: &NodeSequence) -> Result<MrpGraph, TreeError> {
    if s.nodes.is_empty() {
        return Err(TreeError::NoRoot);
    }
    s.check()?;
    let mut g = MrpGraph::new(s.id.clone(), s.framework, s.input.clone());
    let mut node_of = vec![0u32; s.nodes.len()];
    let mut next = 0u32;
    for (t, n) in s.nodes.iter().enumerate() {
        if n.idx == t {
            node_of[t] = next;
            g.nodes.push(MrpNode {
                id: next,
                label: n.label.clone(),
                properties: n.properties.clone(),
                ..Default::default()
            });
            next += 1;
        } else {
            node_of[t] = node_of[n.idx];
        }
    }
    for (t, n) in s.nodes.iter().enumerate() {
        let Some(p) = n.parent else { continue };
        let (parent, child) = (node_of[p], node_of[t]);
        let (source, target) = if n.reversed { (child, parent) } else { (parent, child) };
        g.edges
            .push(MrpEdge::new(source, target, n.incoming_label.clone().unwrap_or_default()));
    }
    let root = node_of[0];
    if s.nodes[0].label.as_deref() == Some(VIRTUAL_ROOT) {
        g.tops = g.edges.iter().filter(|e| e.source == root).map(|e| e.target).collect();
        g.remove_node(root);
    } else {
        g.tops = vec![root];
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::iso::{isomorphic, IsoOptions};
    use proptest::prelude::*;

    fn graph(labels: &[&str], edges: &[(u32, u32, &str)], tops: &[u32]) -> MrpGraph {
        let mut g = MrpGraph::new("g", Framework::Amr, "");
        for (i, l) in labels.iter().enumerate() {
            g.nodes.push(MrpNode::new(i as u32, *l));
        }
        for &(s, t, l) in edges {
            g.edges.push(MrpEdge::new(s, t, l));
        }
        g.tops = tops.to_vec();
        g
    }

    #[test]
    fn alnum_order() {
        assert_eq!(alnum_cmp("x2", "x10"), Ordering::Less);
        assert_eq!(alnum_cmp("ARG1", "ARG0"), Ordering::Greater);
        assert_eq!(alnum_cmp("a", "b"), Ordering::Less);
        assert_eq!(alnum_cmp("op02", "op2"), Ordering::Greater);
        assert_eq!(alnum_cmp("n_9", "n_10"), Ordering::Less);
        assert_eq!(alnum_cmp("", "a"), Ordering::Less);
    }

    #[test]
    fn tree_is_identity() {
        let g = graph(&["a", "c", "b"], &[(0, 1, "x"), (0, 2, "y")], &[0]);
        let s = graph_to_tree(&g).unwrap();
        assert_eq!(s.labels(), ["a", "b", "c"]);
        assert!(s.nodes.iter().enumerate().all(|(t, n)| n.idx == t));
    }

    #[test]
    fn diamond_duplicates_shared_child() {
        // hand-enumerated DFS: a → b → d, then a → c → d (copy)
        let g = graph(&["a", "b", "c", "d"], &[(0, 1, "l"), (0, 2, "l"), (1, 3, "l"), (2, 3, "l")], &[0]);
        let s = graph_to_tree(&g).unwrap();
        assert_eq!(s.labels(), ["a", "b", "d", "c", "d"]);
        assert_eq!(s.indices(), [0, 1, 2, 3, 2]);
        assert_eq!(s.nodes[4].parent, Some(3));
    }

    #[test]
    fn diamond_restores() {
        let s = NodeSequence {
            id: "d".into(),
            framework: Framework::Amr,
            input: String::new(),
            nodes: [
                ("a", 0, None),
                ("b", 1, Some(0)),
                ("d", 2, Some(1)),
                ("c", 3, Some(0)),
                ("d", 2, Some(3)),
            ]
            .into_iter()
            .map(|(l, idx, parent)| SeqNode {
                label: Some(l.into()),
                idx,
                parent,
                incoming_label: parent.map(|_| "l".into()),
                ..Default::default()
            })
            .collect(),
        };
        let g = tree_to_graph(&s).unwrap();
        assert_eq!((g.nodes.len(), g.edges.len()), (4, 4));
        let expected = graph(&["a", "b", "c", "d"], &[(0, 1, "l"), (0, 2, "l"), (1, 3, "l"), (2, 3, "l")], &[0]);
        assert!(isomorphic(&g, &expected, IsoOptions::default()));
    }

    #[test]
    fn amr_reentrancy_appears_twice() {
        // want-01 :ARG0 boy, :ARG1 (go-01 :ARG0 boy)
        let g = graph(
            &["want-01", "boy", "go-01"],
            &[(0, 1, "ARG0"), (0, 2, "ARG1"), (2, 1, "ARG0")],
            &[0],
        );
        let s = graph_to_tree(&g).unwrap();
        assert_eq!(s.labels(), ["want-01", "boy", "go-01", "boy"]);
        assert_eq!(s.nodes[3].idx, 1);
        assert!(isomorphic(&tree_to_graph(&s).unwrap(), &g, IsoOptions::structure()));
    }

    #[test]
    fn cycle_becomes_copy() {
        let g = graph(&["a", "b"], &[(0, 1, "x"), (1, 0, "y")], &[0]);
        let s = graph_to_tree(&g).unwrap();
        assert_eq!(s.indices(), [0, 1, 0]);
        assert!(isomorphic(&tree_to_graph(&s).unwrap(), &g, IsoOptions::structure()));
    }

    #[test]
    fn reversed_edges_reach_non_rooted_nodes() {
        // quantifier q → dog, verb → dog; q is not reachable from the top.
        let g = graph(&["_see_v", "_dog_n", "_the_q"], &[(0, 1, "ARG1"), (2, 1, "BV")], &[0]);
        let s = graph_to_tree(&g).unwrap();
        assert_eq!(s.labels(), ["_see_v", "_dog_n", "_the_q"]);
        assert!(s.nodes[2].reversed);
        assert!(isomorphic(&tree_to_graph(&s).unwrap(), &g, IsoOptions::structure()));
    }

    #[test]
    fn multiple_tops_use_virtual_root() {
        let g = graph(&["a", "b"], &[], &[0, 1]);
        let s = graph_to_tree(&g).unwrap();
        assert_eq!(s.labels(), [VIRTUAL_ROOT, "a", "b"]);
        let back = tree_to_graph(&s).unwrap();
        assert!(isomorphic(&back, &g, IsoOptions::structure()));
    }

    #[test]
    fn disconnected_lists_unreachable() {
        let g = graph(&["a", "b", "c"], &[(0, 1, "x")], &[0]);
        assert_eq!(
            graph_to_tree(&g).unwrap_err(),
            TreeError::Disconnected {
                id: "g".into(),
                unreachable: vec![2]
            }
        );
    }

    #[test]
    fn empty_sequence_has_no_root() {
        let s = NodeSequence {
            id: String::new(),
            framework: Framework::Amr,
            input: String::new(),
            nodes: vec![],
        };
        assert_eq!(tree_to_graph(&s).unwrap_err(), TreeError::NoRoot);
    }

    #[test]
    fn forward_idx_rejected() {
        let s = NodeSequence {
            id: String::new(),
            framework: Framework::Amr,
            input: String::new(),
            nodes: vec![
                SeqNode {
                    label: Some("a".into()),
                    idx: 1,
                    ..Default::default()
                },
                SeqNode {
                    label: Some("b".into()),
                    idx: 1,
                    parent: Some(0),
                    ..Default::default()
                },
            ],
        };
        assert!(matches!(tree_to_graph(&s), Err(TreeError::ForwardIndex { .. })));
    }

    /// Random rooted DAG: node 0 is the root and every other node has at
    /// least one parent with a smaller index.
    pub(crate) fn dag_strategy(max_nodes: usize) -> impl Strategy<Value = MrpGraph> {
        (1..=max_nodes)
            .prop_flat_map(|n| {
                let parents = (1..n)
                    .map(|v| proptest::collection::btree_set(0..v, 1..=v.min(3)))
                    .collect::<Vec<_>>();
                let labels = proptest::collection::vec(0u8..4, n);
                (Just(n), parents, labels)
            })
            .prop_map(|(n, parents, labels)| {
                let mut g = MrpGraph::new("r", Framework::Amr, "");
                for (i, l) in labels.iter().enumerate().take(n) {
                    g.nodes.push(MrpNode::new(i as u32, format!("c{l}")));
                }
                for (v, ps) in parents.into_iter().enumerate() {
                    for p in ps {
                        g.edges.push(MrpEdge::new(p as u32, (v + 1) as u32, format!("ARG{}", p % 2)));
                    }
                }
                g.tops = vec![0];
                g
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn dag_round_trip(g in dag_strategy(12)) {
            let s = graph_to_tree(&g).unwrap();
            s.check().unwrap();
            let extra: usize = g.nodes.iter().map(|n| g.in_degree(n.id).saturating_sub(1)).sum();
            prop_assert_eq!(s.len(), g.nodes.len() + extra);
            prop_assert!(isomorphic(&tree_to_graph(&s).unwrap(), &g, IsoOptions::structure()));
            prop_assert_eq!(graph_to_tree(&g).unwrap(), s);
        }
    }
}
