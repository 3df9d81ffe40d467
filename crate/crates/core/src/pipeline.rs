//! Conversion between MRP graphs and model targets, per framework, and the
//! inverse from predictions back to MRP graphs.
//!
//! Bilexical frameworks (DM, PSD) use one node per token. The other
//! frameworks are linearised into a decoder sequence whose original
//! positions form the node set over which edges are predicted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CompanionSentence, Framework, MrpEdge, MrpGraph, MrpNode};
use crate::heads::{apply_edge_label, edge_flags, encode_edge_label};
use crate::prep::{
    amr_postprocess, amr_preprocess, anchors_to_spans, anonymize_sentence, build_multiword_table, eds_reduce, eds_restore,
    merge_multiwords, span_of_anchor, spans_to_anchors, ucca_mark_implicit, ucca_strip_implicit, AnonymizationEntry, AnonymizationTable,
    MultiwordTable, RestoreError, SenseTable, SpanError, SpanGraph, TokenSpan,
};
use crate::tree::{graph_to_tree, TreeError, VIRTUAL_ROOT};

/// Property carrying the true label of an EDS node whose `carg` value was
/// moved into the label slot.
pub const LABEL_PROPERTY: &str = "<label>";

/// Node property copied from the companion XPOS for bilexical frameworks.
pub const POS_PROPERTY: &str = "pos";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("graph `{id}` is {found}, expected {expected}")]
    Framework { id: String, expected: Framework, found: Framework },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Span(#[from] SpanError),
    #[error(transparent)]
    Restore(#[from] RestoreError),
    #[error("graph `{id}`: node {node} has no anchor on a token")]
    Unanchored { id: String, node: u32 },
}

/// One node of the edge-prediction space.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Item {
    pub label: String,
    pub properties: Vec<(String, String)>,
    pub span: Option<TokenSpan>,
}

/// Gold or predicted structure in model space.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Target {
    /// Decoder sequence `(label, idx)`; empty for bilexical frameworks.
    pub seq: Vec<(String, usize)>,
    pub items: Vec<Item>,
    /// `(head item, dependent item, label)`.
    pub edges: Vec<(usize, usize, String)>,
    pub tops: Vec<usize>,
}

/// The sentence as seen by the model, with what is needed to undo
/// tokenisation changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Input {
    pub id: String,
    pub framework: Framework,
    pub text: String,
    /// Model tokens (after multiword merging or anonymisation).
    pub sentence: CompanionSentence,
    pub amr: Option<AnonymizationEntry>,
}

impl Input {
    pub fn lemmas(&self) -> Vec<String> {
        self.sentence.tokens.iter().map(|t| t.lemma.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub input: Input,
    pub target: Target,
}

/// Corpus-level tables learned at preprocessing time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Resources {
    pub multiword: MultiwordTable,
    pub anonymization: AnonymizationTable,
    pub senses: SenseTable,
}

impl Resources {
    pub fn build(framework: Framework, corpus: &[(MrpGraph, CompanionSentence)]) -> Self {
        let mut r = Resources::default();
        match framework {
            Framework::Eds => r.multiword = build_multiword_table(corpus.iter().map(|(g, c)| (g, c))),
            Framework::Amr => {
                for (g, c) in corpus {
                    r.senses.observe(g);
                    r.anonymization.observe(&amr_preprocess(g, c).entry);
                }
            }
            _ => {}
        }
        r
    }

    pub fn to_files(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("multiword", self.multiword.to_lines()),
            ("anonymization", self.anonymization.to_lines()),
            ("senses", self.senses.to_lines()),
        ])
    }

    pub fn from_files(get: impl Fn(&str) -> Option<String>) -> Option<Self> {
        Some(Resources {
            multiword: MultiwordTable::from_lines(&get("multiword")?)?,
            anonymization: AnonymizationTable::from_lines(&get("anonymization")?)?,
            senses: SenseTable::from_lines(&get("senses")?)?,
        })
    }
}

/// Model input for a raw sentence.
pub fn prepare_input(id: &str, framework: Framework, text: &str, c: &CompanionSentence, res: &Resources) -> Input {
    let (sentence, amr) = match framework {
        Framework::Eds => (merge_multiwords(c, text, &res.multiword).0, None),
        Framework::Amr => {
            let (s, entry) = anonymize_sentence(c, &res.anonymization);
            (s, Some(entry))
        }
        _ => (c.clone(), None),
    };
    Input {
        id: id.to_string(),
        framework,
        text: text.to_string(),
        sentence,
        amr,
    }
}

/// Gold instance for training.
pub fn prepare(g: &MrpGraph, c: &CompanionSentence, res: &Resources) -> Result<Instance, PipelineError> {
    let fw = g.framework;
    if fw.is_bilexical() {
        let input = prepare_input(&g.id, fw, &g.input, c, res);
        let target = bilexical_target(g, &input.sentence)?;
        return Ok(Instance { input, target });
    }
    let (input, graph) = match fw {
        Framework::Amr => {
            let p = amr_preprocess(g, c);
            let input = Input {
                id: g.id.clone(),
                framework: fw,
                text: g.input.clone(),
                sentence: p.sentence,
                amr: Some(p.entry),
            };
            (input, p.graph)
        }
        Framework::Eds => {
            let input = prepare_input(&g.id, fw, &g.input, c, res);
            (input, exchange_carg(&eds_reduce(g)))
        }
        _ => {
            let input = prepare_input(&g.id, fw, &g.input, c, res);
            (input, encode_edge_attributes(&ucca_mark_implicit(g)))
        }
    };
    let sg = anchors_to_spans(&graph, &input.sentence)?;
    let target = sequence_target(&sg)?;
    Ok(Instance { input, target })
}

fn token_of(g: &MrpGraph, n: &MrpNode, c: &CompanionSentence) -> Result<usize, PipelineError> {
    n.anchor_range()
        .and_then(|a| span_of_anchor(a, c))
        .map(|(s, _)| s.start)
        .ok_or_else(|| PipelineError::Unanchored {
            id: g.id.clone(),
            node: n.id,
        })
}

fn bilexical_target(g: &MrpGraph, c: &CompanionSentence) -> Result<Target, PipelineError> {
    let mut items: Vec<Item> = c
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| Item {
            label: t.lemma.clone(),
            properties: Vec::new(),
            span: Some(TokenSpan::new(i, i)),
        })
        .collect();
    let mut tok = BTreeMap::new();
    for n in &g.nodes {
        let t = token_of(g, n, c)?;
        tok.insert(n.id, t);
        items[t].label = n.label_str().to_string();
        items[t].properties = n.properties.iter().filter(|(k, _)| k != POS_PROPERTY).cloned().collect();
    }
    let edges = g.edges.iter().map(|e| (tok[&e.source], tok[&e.target], e.label.clone())).collect();
    let tops = g.tops.iter().filter_map(|t| tok.get(t).copied()).collect();
    Ok(Target {
        seq: Vec::new(),
        items,
        edges,
        tops,
    })
}

fn exchange_carg(g: &MrpGraph) -> MrpGraph {
    let mut out = g.clone();
    for n in &mut out.nodes {
        if let Some(pos) = n.properties.iter().position(|(k, _)| k == "carg") {
            let (_, value) = n.properties.remove(pos);
            let label = n.label.replace(value).unwrap_or_default();
            n.properties.push((LABEL_PROPERTY.to_string(), label));
        }
    }
    out
}

fn restore_carg(g: &MrpGraph) -> MrpGraph {
    let mut out = g.clone();
    for n in &mut out.nodes {
        if let Some(pos) = n.properties.iter().position(|(k, _)| k == LABEL_PROPERTY) {
            let (_, label) = n.properties.remove(pos);
            let value = n.label.replace(label).unwrap_or_default();
            n.properties.push(("carg".to_string(), value));
        }
    }
    out
}

fn encode_edge_attributes(g: &MrpGraph) -> MrpGraph {
    let mut out = g.clone();
    for e in &mut out.edges {
        e.label = encode_edge_label(&e.label, &edge_flags(e));
        e.attributes.clear();
    }
    out
}

fn sequence_target(sg: &SpanGraph) -> Result<Target, PipelineError> {
    let seq = graph_to_tree(&sg.graph)?;
    let mut item_of: BTreeMap<u32, usize> = BTreeMap::new();
    let mut position_item = vec![0; seq.len()];
    let mut items = Vec::new();
    for (t, n) in seq.nodes.iter().enumerate() {
        if n.idx != t {
            position_item[t] = position_item[n.idx];
            continue;
        }
        position_item[t] = items.len();
        let node = n.source_id.and_then(|id| sg.graph.node(id));
        if let Some(node) = node {
            item_of.insert(node.id, items.len());
        }
        items.push(Item {
            label: n.label_str().to_string(),
            properties: node.map(|x| x.properties.clone()).unwrap_or_default(),
            span: n.source_id.and_then(|id| sg.spans.get(&id).copied()),
        });
    }
    let mut edges: Vec<(usize, usize, String)> = sg
        .graph
        .edges
        .iter()
        .map(|e| (item_of[&e.source], item_of[&e.target], e.label.clone()))
        .collect();
    if seq.nodes[0].label.as_deref() == Some(VIRTUAL_ROOT) {
        for &t in &sg.graph.tops {
            edges.push((0, item_of[&t], String::new()));
        }
    }
    let seq_pairs = seq.nodes.iter().map(|n| (n.label_str().to_string(), n.idx)).collect();
    Ok(Target {
        seq: seq_pairs,
        items,
        edges,
        tops: vec![0],
    })
}

/// Rebuild an MRP graph from a target in model space.
pub fn restore(input: &Input, target: &Target, res: &Resources) -> Result<MrpGraph, PipelineError> {
    let fw = input.framework;
    let mut g = MrpGraph::new(input.id.clone(), fw, input.text.clone());
    if fw.is_bilexical() {
        for (i, (item, tok)) in target.items.iter().zip(&input.sentence.tokens).enumerate() {
            let mut n = MrpNode::new(i as u32, item.label.clone()).with_property(POS_PROPERTY, tok.xpos.clone());
            n.properties.extend(item.properties.iter().cloned());
            n.anchors = Some(vec![crate::graph::Anchor::new(tok.start, tok.end)]);
            g.nodes.push(n);
        }
        g.edges = target
            .edges
            .iter()
            .map(|(h, d, l)| MrpEdge::new(*h as u32, *d as u32, l.clone()))
            .collect();
        g.tops = target.tops.iter().map(|&t| t as u32).collect();
        return Ok(g);
    }
    let mut spans = BTreeMap::new();
    for (i, item) in target.items.iter().enumerate() {
        let mut n = MrpNode::new(i as u32, item.label.clone());
        n.properties = item.properties.clone();
        if let Some(s) = item.span {
            spans.insert(i as u32, s);
        }
        g.nodes.push(n);
    }
    g.edges = target
        .edges
        .iter()
        .map(|(h, d, l)| MrpEdge::new(*h as u32, *d as u32, l.clone()))
        .collect();
    let virtual_root = g.nodes.first().is_some_and(|n| n.label_str() == VIRTUAL_ROOT);
    if virtual_root {
        g.tops = g.edges.iter().filter(|e| e.source == 0).map(|e| e.target).collect();
        g.remove_node(0);
        spans.remove(&0);
    } else {
        g.tops = target.tops.iter().map(|&t| t as u32).collect();
    }
    let g = spans_to_anchors(
        &SpanGraph {
            graph: g,
            spans,
            snapped: Vec::new(),
        },
        &input.sentence,
    )?;
    Ok(match fw {
        Framework::Eds => eds_restore(&restore_carg(&g))?,
        Framework::Ucca => {
            let mut g = ucca_strip_implicit(&g);
            for e in &mut g.edges {
                let composite = e.label.clone();
                apply_edge_label(e, &composite);
            }
            g
        }
        Framework::Amr => {
            let empty = AnonymizationEntry::default();
            amr_postprocess(&g, input.amr.as_ref().unwrap_or(&empty), &res.senses)
        }
        _ => g,
    })
}

/// Check a graph belongs to `framework`.
pub fn expect_framework(g: &MrpGraph, framework: Framework) -> Result<(), PipelineError> {
    if g.framework != framework {
        return Err(PipelineError::Framework {
            id: g.id.clone(),
            expected: framework,
            found: g.framework,
        });
    }
    Ok(())
}
