use mrparse::graph::{Anchor, Framework, MrpEdge, MrpGraph, MrpNode};
use mrparse::tree::{graph_to_tree, tree_to_graph};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::collections::BTreeSet;

/// Weakly connected DAG on at most `max` nodes. Edge directions follow a
/// random topological order, so some nodes are only reachable against edge
/// direction; one or two tops.
pub fn random_dag(rng: &mut ChaCha8Rng, max: usize) -> MrpGraph {
    let n = rng.gen_range(1..=max);
    let mut g = MrpGraph::new(format!("dag{n}"), Framework::Amr, "");
    for i in 0..n {
        let mut node = MrpNode::new(i as u32, format!("c{}", rng.gen_range(0..4)));
        if rng.gen_bool(0.3) {
            node.properties.push(("op1".into(), format!("v{}", rng.gen_range(0..3))));
        }
        g.nodes.push(node);
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(rng);
    let mut pairs = BTreeSet::new();
    for j in 1..n {
        pairs.insert((rng.gen_range(0..j), j));
        for i in 0..j {
            if rng.gen_bool(0.15) {
                pairs.insert((i, j));
            }
        }
    }
    for (i, j) in pairs {
        g.edges
            .push(MrpEdge::new(order[i], order[j], format!("ARG{}", rng.gen_range(0..3))));
    }
    let tops = if n > 1 && rng.gen_bool(0.3) { 2 } else { 1 };
    let mut ids: Vec<u32> = (0..n as u32).collect();
    ids.shuffle(rng);
    g.tops = ids[..tops].to_vec();
    g.tops.sort_unstable();
    g
}

/// A random DAG carrying every optional MRP field.
pub fn rich_graph(rng: &mut ChaCha8Rng) -> MrpGraph {
    let mut g = random_dag(rng, 6);
    g.id = "rich \"q\" ⊕ é".into();
    g.input = "Unicode – “quoted” text\twith tab".into();
    g.extras.insert("flavor".into(), json!(2));
    g.extras.insert("version".into(), json!(1.1));
    g.extras.insert("provenance".into(), json!({"k": [1, null, "x"]}));
    for n in &mut g.nodes {
        if rng.gen_bool(0.5) {
            let from = rng.gen_range(0..20);
            n.anchors = Some(vec![Anchor::new(from, from + rng.gen_range(1..5))]);
        }
        if rng.gen_bool(0.2) {
            n.label = None;
        }
        if rng.gen_bool(0.2) {
            n.extras.insert("score".into(), json!(0.5));
        }
    }
    for e in &mut g.edges {
        if rng.gen_bool(0.3) {
            e.attributes.push(("remote".into(), Value::Bool(true)));
        }
        if rng.gen_bool(0.2) {
            e.label.clear();
        }
    }
    g
}

/// "the big dog barked" with a quantifier and a property-bearing node that
/// fold into their surface nodes, and a compound that becomes an edge.
pub fn reducible_eds() -> MrpGraph {
    let mut g = MrpGraph::new("eds", Framework::Eds, "the big dog barked");
    let spans = [
        ("_the_q", 0, 3),
        ("_big_a_1", 4, 7),
        ("_dog_n_1", 8, 11),
        ("_bark_v_1", 12, 18),
        ("def_explicit_q", 8, 11),
        ("compound", 4, 11),
        ("card", 4, 7),
    ];
    for (i, (label, from, to)) in spans.into_iter().enumerate() {
        let mut n = MrpNode::new(i as u32, label);
        n.anchors = Some(vec![Anchor::new(from, to)]);
        g.nodes.push(n);
    }
    g.nodes[6].properties.push(("carg".into(), "3".into()));
    for (s, t, l) in [
        (3, 2, "ARG1"),
        (0, 2, "BV"),
        (4, 2, "BV"),
        (5, 2, "ARG1"),
        (5, 1, "ARG2"),
        (6, 1, "ARG1"),
    ] {
        g.edges.push(MrpEdge::new(s, t, l));
    }
    g.tops = vec![3];
    g
}

type Edges = Vec<(u32, u32, String)>;
type Nodes = Vec<(u32, String, Vec<(String, String)>)>;

/// Nodes, edges and tops expressed in the original graph's ids.
fn in_source_ids(g: &MrpGraph, ids: &dyn Fn(u32) -> u32) -> (Nodes, Edges, Vec<u32>) {
    let mut nodes: Vec<_> = g
        .nodes
        .iter()
        .map(|n| (ids(n.id), n.label_str().to_string(), n.properties.clone()))
        .collect();
    nodes.sort();
    let mut edges: Edges = g.edges.iter().map(|e| (ids(e.source), ids(e.target), e.label.clone())).collect();
    edges.sort();
    let mut tops: Vec<u32> = g.tops.iter().map(|&t| ids(t)).collect();
    tops.sort_unstable();
    (nodes, edges, tops)
}

/// Linearise and restore `g`, checking the sequence length and that the
/// restored graph equals `g` once mapped back to the original node ids.
pub fn tree_round_trip(g: &MrpGraph) -> Result<(), String> {
    let seq = graph_to_tree(g).map_err(|e| e.to_string())?;
    seq.check().map_err(|e| e.to_string())?;
    // one position for the root and one per traversed edge
    let virtual_edges = if g.tops.len() > 1 { g.tops.len() } else { 0 };
    if seq.len() != 1 + g.edges.len() + virtual_edges {
        return Err(format!("{} positions for {g:?}", seq.len()));
    }
    let back = tree_to_graph(&seq).map_err(|e| e.to_string())?;
    // restored ids count original positions in order
    let originals: Vec<Option<u32>> = seq.originals().into_iter().map(|t| seq.nodes[t].source_id).collect();
    let map = |id: u32| originals[id as usize].expect("restored node has a source");
    if in_source_ids(&back, &map) != in_source_ids(g, &|id| id) {
        return Err(format!("restored {back:?} differs from {g:?}"));
    }
    Ok(())
}
