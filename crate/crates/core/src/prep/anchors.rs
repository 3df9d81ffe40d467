use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::graph::{Anchor, CompanionSentence, MrpGraph};

/// Inclusive token range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        TokenSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A graph whose node anchors have been replaced by token spans.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanGraph {
    /// The graph with `anchors` cleared on every node that had one.
    pub graph: MrpGraph,
    pub spans: BTreeMap<u32, TokenSpan>,
    /// Nodes whose anchors did not fall on token boundaries and were snapped.
    pub snapped: Vec<u32>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SpanError {
    #[error("node {node} is anchored but the sentence has no tokens")]
    NoTokens { node: u32 },
    #[error("node {node} has a span {start}..={end} outside a {len}-token sentence")]
    OutOfRange { node: u32, start: usize, end: usize, len: usize },
}

/// Covering token span of a character anchor; the flag is set when the
/// anchor had to be widened (or moved) to token boundaries.
pub fn span_of_anchor(anchor: Anchor, c: &CompanionSentence) -> Option<(TokenSpan, bool)> {
    let toks = &c.tokens;
    if toks.is_empty() {
        return None;
    }
    let overlapping: Vec<usize> = (0..toks.len())
        .filter(|&i| toks[i].start < anchor.to && toks[i].end > anchor.from)
        .collect();
    let (start, end) = match (overlapping.first(), overlapping.last()) {
        (Some(&s), Some(&e)) => (s, e),
        _ => {
            // Empty or whitespace-only anchor: nearest token by start offset.
            let nearest = (0..toks.len())
                .min_by_key(|&i| toks[i].start.abs_diff(anchor.from))
                .expect("non-empty");
            return Some((TokenSpan::new(nearest, nearest), true));
        }
    };
    let exact = toks[start].start == anchor.from && toks[end].end == anchor.to;
    Some((TokenSpan::new(start, end), !exact))
}

pub fn anchor_of_span(span: TokenSpan, c: &CompanionSentence) -> Anchor {
    Anchor::new(c.tokens[span.start].start, c.tokens[span.end].end)
}

/// Replace every node's character anchors by the token span covering them.
pub fn anchors_to_spans(g: &MrpGraph, c: &CompanionSentence) -> Result<SpanGraph, SpanError> {
    let mut graph = g.clone();
    let mut spans = BTreeMap::new();
    let mut snapped = Vec::new();
    for node in &mut graph.nodes {
        let Some(anchors) = node.anchors.take() else { continue };
        let Some(range) = ({
            let from = anchors.iter().map(|a| a.from).min();
            let to = anchors.iter().map(|a| a.to).max();
            from.zip(to).map(|(f, t)| Anchor::new(f, t))
        }) else {
            continue;
        };
        let (span, snap) = span_of_anchor(range, c).ok_or(SpanError::NoTokens { node: node.id })?;
        if snap || anchors.len() > 1 {
            snapped.push(node.id);
        }
        spans.insert(node.id, span);
    }
    Ok(SpanGraph { graph, spans, snapped })
}

/// Map token spans back to character anchors using token offsets.
pub fn spans_to_anchors(sg: &SpanGraph, c: &CompanionSentence) -> Result<MrpGraph, SpanError> {
    let mut g = sg.graph.clone();
    for node in &mut g.nodes {
        if let Some(&span) = sg.spans.get(&node.id) {
            if span.start > span.end || span.end >= c.len() {
                return Err(SpanError::OutOfRange {
                    node: node.id,
                    start: span.start,
                    end: span.end,
                    len: c.len(),
                });
            }
            node.anchors = Some(vec![anchor_of_span(span, c)]);
        }
    }
    Ok(g)
}
