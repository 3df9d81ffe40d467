//! Anchor-keyed component evaluation.
//!
//! A node is keyed by its anchor range (absent for unanchored nodes) and
//! label. Components are compared as multisets: tops, labels, properties,
//! anchors and edges, plus their micro-average.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{Anchor, MrpGraph, MrpNode};
use crate::heads::{edge_flags, encode_edge_label};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{gold} gold graphs but {pred} predictions")]
    Count { gold: usize, pred: usize },
    #[error("graph {index}: gold id `{gold}` paired with prediction `{pred}`")]
    Id { index: usize, gold: String, pred: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub gold: usize,
    pub pred: usize,
    pub matched: usize,
}

impl Counts {
    /// 1 when nothing was predicted and nothing was expected.
    pub fn precision(&self) -> f64 {
        match (self.pred, self.gold) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (p, _) => self.matched as f64 / p as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        match (self.gold, self.pred) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (g, _) => self.matched as f64 / g as f64,
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Counts) {
        self.gold += other.gold;
        self.pred += other.pred;
        self.matched += other.matched;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub tops: Counts,
    pub labels: Counts,
    pub properties: Counts,
    pub anchors: Counts,
    pub edges: Counts,
}

impl EvalReport {
    pub fn components(&self) -> [(&'static str, Counts); 5] {
        [
            ("tops", self.tops),
            ("labels", self.labels),
            ("properties", self.properties),
            ("anchors", self.anchors),
            ("edges", self.edges),
        ]
    }

    pub fn micro(&self) -> Counts {
        let mut all = Counts::default();
        for (_, c) in self.components() {
            all.add(c);
        }
        all
    }

    /// Labeled F1 of bilexical graphs: the edge component.
    pub fn labeled_f1(&self) -> f64 {
        self.edges.f1()
    }

    fn merge(&mut self, other: &EvalReport) {
        self.tops.add(other.tops);
        self.labels.add(other.labels);
        self.properties.add(other.properties);
        self.anchors.add(other.anchors);
        self.edges.add(other.edges);
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut out = serde_json::Map::new();
        let mut comps: Vec<(&str, Counts)> = self.components().to_vec();
        comps.push(("all", self.micro()));
        for (name, c) in comps {
            out.insert(
                name.to_string(),
                serde_json::json!({
                    "g": c.gold, "s": c.pred, "c": c.matched,
                    "p": c.precision(), "r": c.recall(), "f": c.f1(),
                }),
            );
        }
        serde_json::Value::Object(out)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("component    gold   pred  match  P       R       F1\n");
        let mut comps: Vec<(&str, Counts)> = self.components().to_vec();
        comps.push(("all", self.micro()));
        for (name, c) in comps {
            out.push_str(&format!(
                "{name:<10} {:>6} {:>6} {:>6}  {:.4}  {:.4}  {:.4}\n",
                c.gold,
                c.pred,
                c.matched,
                c.precision(),
                c.recall(),
                c.f1()
            ));
        }
        out
    }
}

type Key = (Option<Anchor>, String);

fn key(n: &MrpNode) -> Key {
    (n.anchor_range(), n.label_str().to_string())
}

fn multiset<T: Ord>(items: impl IntoIterator<Item = T>) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for x in items {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

fn compare<T: Ord>(gold: impl IntoIterator<Item = T>, pred: impl IntoIterator<Item = T>) -> Counts {
    let (g, p) = (multiset(gold), multiset(pred));
    let matched = g.iter().map(|(k, &n)| n.min(p.get(k).copied().unwrap_or(0))).sum();
    Counts {
        gold: g.values().sum(),
        pred: p.values().sum(),
        matched,
    }
}

struct Parts {
    tops: Vec<Key>,
    labels: Vec<Key>,
    properties: Vec<(Key, String, String)>,
    anchors: Vec<Anchor>,
    edges: Vec<(Key, Key, String)>,
}

fn parts(g: &MrpGraph) -> Parts {
    let keys: BTreeMap<u32, Key> = g.nodes.iter().map(|n| (n.id, key(n))).collect();
    Parts {
        tops: g.tops.iter().filter_map(|t| keys.get(t).cloned()).collect(),
        labels: g.nodes.iter().map(key).collect(),
        properties: g
            .nodes
            .iter()
            .flat_map(|n| n.properties.iter().map(move |(k, v)| (key(n), k.clone(), v.clone())))
            .collect(),
        anchors: g.nodes.iter().filter_map(MrpNode::anchor_range).collect(),
        edges: g
            .edges
            .iter()
            .filter_map(|e| {
                let label = encode_edge_label(&e.label, &edge_flags(e));
                Some((keys.get(&e.source)?.clone(), keys.get(&e.target)?.clone(), label))
            })
            .collect(),
    }
}

/// Compare one predicted graph against its gold graph.
pub fn evaluate_pair(gold: &MrpGraph, pred: &MrpGraph) -> EvalReport {
    let (g, p) = (parts(gold), parts(pred));
    EvalReport {
        tops: compare(g.tops, p.tops),
        labels: compare(g.labels, p.labels),
        properties: compare(g.properties, p.properties),
        anchors: compare(g.anchors, p.anchors),
        edges: compare(g.edges, p.edges),
    }
}

/// Sum of per-graph counts over a corpus paired by position and id.
pub fn evaluate(gold: &[MrpGraph], pred: &[MrpGraph]) -> Result<EvalReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::Count {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut report = EvalReport::default();
    for (index, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.id != p.id {
            return Err(EvalError::Id {
                index,
                gold: g.id.clone(),
                pred: p.id.clone(),
            });
        }
        report.merge(&evaluate_pair(g, p));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Framework, MrpEdge};

    fn sample() -> MrpGraph {
        let mut g = MrpGraph::new("1", Framework::Dm, "a b c");
        g.nodes.push(MrpNode::new(0, "a").with_anchor(0, 1));
        g.nodes.push(MrpNode::new(1, "b").with_anchor(2, 3).with_property("pos", "NN"));
        g.nodes.push(MrpNode::new(2, "c").with_anchor(4, 5));
        g.edges.push(MrpEdge::new(0, 1, "ARG1"));
        g.edges.push(MrpEdge::new(0, 2, "ARG2"));
        g.tops = vec![0];
        g
    }

    #[test]
    fn identical_graphs_score_one() {
        let r = evaluate(&[sample()], &[sample()]).unwrap();
        for (name, c) in r.components() {
            assert_eq!(c.f1(), 1.0, "{name}");
        }
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let empty = MrpGraph::new("1", Framework::Dm, "a b c");
        let r = evaluate(&[sample()], &[empty]).unwrap();
        for (name, c) in r.components() {
            assert_eq!(c.f1(), 0.0, "{name}");
        }
    }

    #[test]
    fn one_of_two_edges() {
        let mut p = sample();
        p.edges[1].label = "ARG3".into();
        p.edges.truncate(2);
        let r = evaluate_pair(&sample(), &p);
        assert_eq!(
            r.edges,
            Counts {
                gold: 2,
                pred: 2,
                matched: 1
            }
        );
        assert_eq!(r.edges.f1(), 0.5);
    }

    #[test]
    fn id_mismatch() {
        let mut p = sample();
        p.id = "2".into();
        assert!(matches!(evaluate(&[sample()], &[p]), Err(EvalError::Id { .. })));
    }
}
