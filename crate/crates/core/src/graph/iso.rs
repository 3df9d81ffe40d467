//! Label-preserving graph isomorphism, used to check that the
//! pre-/post-processing pairs and tree conversion are exact inverses.

use std::collections::HashMap;

use super::{Anchor, MrpGraph, MrpNode};

#[derive(Clone, Copy, Debug)]
pub struct IsoOptions {
    pub properties: bool,
    pub anchors: bool,
    pub edge_attributes: bool,
    pub tops: bool,
}

impl Default for IsoOptions {
    fn default() -> Self {
        IsoOptions {
            properties: true,
            anchors: true,
            edge_attributes: true,
            tops: true,
        }
    }
}

impl IsoOptions {
    /// Labels and labelled edges only.
    pub fn structure() -> Self {
        IsoOptions {
            properties: false,
            anchors: false,
            edge_attributes: false,
            tops: true,
        }
    }
}

type Sig = (String, Vec<(String, String)>, Option<Vec<Anchor>>, usize, usize);

fn signature(g: &MrpGraph, n: &MrpNode, opts: IsoOptions) -> Sig {
    let mut props = if opts.properties { n.properties.clone() } else { Vec::new() };
    props.sort();
    let anchors = if opts.anchors {
        n.anchors.clone().map(|mut a| {
            a.sort();
            a
        })
    } else {
        None
    };
    let out = g.edges.iter().filter(|e| e.source == n.id).count();
    let inn = g.edges.iter().filter(|e| e.target == n.id).count();
    (n.label_str().to_string(), props, anchors, out, inn)
}

/// Edge labels (with attributes when requested) between two node indices.
fn edge_table(g: &MrpGraph, opts: IsoOptions) -> HashMap<(usize, usize), Vec<String>> {
    let index: HashMap<u32, usize> = g.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let mut table: HashMap<(usize, usize), Vec<String>> = HashMap::new();
    for e in &g.edges {
        let key = (index[&e.source], index[&e.target]);
        let mut label = e.label.clone();
        if opts.edge_attributes {
            let mut attrs: Vec<String> = e.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
            attrs.sort();
            for a in attrs {
                label.push('\u{0}');
                label.push_str(&a);
            }
        }
        table.entry(key).or_default().push(label);
    }
    for labels in table.values_mut() {
        labels.sort();
    }
    table
}

/// Whether a bijection between the nodes of `a` and `b` preserves node
/// labels, the selected node payloads, labelled edges and tops.
pub fn isomorphic(a: &MrpGraph, b: &MrpGraph, opts: IsoOptions) -> bool {
    if a.nodes.len() != b.nodes.len() || a.edges.len() != b.edges.len() {
        return false;
    }
    if opts.tops && a.tops.len() != b.tops.len() {
        return false;
    }
    let sa: Vec<Sig> = a.nodes.iter().map(|n| signature(a, n, opts)).collect();
    let sb: Vec<Sig> = b.nodes.iter().map(|n| signature(b, n, opts)).collect();
    let mut sorted_a = sa.clone();
    let mut sorted_b = sb.clone();
    sorted_a.sort();
    sorted_b.sort();
    if sorted_a != sorted_b {
        return false;
    }
    let ea = edge_table(a, opts);
    let eb = edge_table(b, opts);
    let tops_a: Vec<bool> = a.nodes.iter().map(|n| a.tops.contains(&n.id)).collect();
    let tops_b: Vec<bool> = b.nodes.iter().map(|n| b.tops.contains(&n.id)).collect();
    let n = a.nodes.len();
    let mut state = Search {
        sa: &sa,
        sb: &sb,
        ea: &ea,
        eb: &eb,
        tops_a: &tops_a,
        tops_b: &tops_b,
        check_tops: opts.tops,
        map: vec![usize::MAX; n],
        used: vec![false; n],
    };
    state.extend(0)
}

struct Search<'a> {
    sa: &'a [Sig],
    sb: &'a [Sig],
    ea: &'a HashMap<(usize, usize), Vec<String>>,
    eb: &'a HashMap<(usize, usize), Vec<String>>,
    tops_a: &'a [bool],
    tops_b: &'a [bool],
    check_tops: bool,
    map: Vec<usize>,
    used: Vec<bool>,
}

impl Search<'_> {
    fn edges_match(&self, u: usize, w: usize) -> bool {
        let empty = Vec::new();
        let fu = self.map[u];
        let fw = self.map[w];
        self.ea.get(&(u, w)).unwrap_or(&empty) == self.eb.get(&(fu, fw)).unwrap_or(&empty)
    }

    fn extend(&mut self, u: usize) -> bool {
        if u == self.map.len() {
            return true;
        }
        for v in 0..self.sb.len() {
            if self.used[v] || self.sa[u] != self.sb[v] {
                continue;
            }
            if self.check_tops && self.tops_a[u] != self.tops_b[v] {
                continue;
            }
            self.map[u] = v;
            let consistent = (0..=u).all(|w| self.edges_match(u, w) && self.edges_match(w, u));
            if consistent {
                self.used[v] = true;
                if self.extend(u + 1) {
                    return true;
                }
                self.used[v] = false;
            }
            self.map[u] = usize::MAX;
        }
        false
    }
}
