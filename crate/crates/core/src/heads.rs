//! Auxiliary predictors: top node, token frames, node properties, anchors,
//! and the composite edge-label codec.

use rand::Rng;
use serde_json::Value;

use crate::edge::{biaffine, EdgePosterior};
use crate::graph::MrpEdge;
use crate::nn::{Linear, Vocab};
use crate::prep::TokenSpan;
use crate::tensor::{Init, ParamStore, TResult, Tensor, TensorError};

/// Top for frameworks with a virtual ROOT: the node with the highest
/// `Q(ROOT → j)`, lowest index on ties.
pub fn predict_top_root(q: &EdgePosterior, root: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in (0..q.n).filter(|&j| j != root) {
        let v = q.get(root, j);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.map(|(j, _)| j)
}

/// Top for generated node sequences: the first node.
pub fn predict_top_first(len: usize) -> Option<usize> {
    (len > 0).then_some(0)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Single-hidden-layer MLP classifier over a label vocabulary.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub vocab: Vocab,
    hidden: Linear,
    out: Linear,
}

impl Classifier {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, vocab: Vocab, rng: &mut R) -> Self {
        let classes = vocab.len();
        Classifier {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, classes, rng),
            vocab,
        }
    }

    /// Unnormalised scores, `[rows, classes]`.
    pub fn logits(&self, x: &Tensor) -> TResult {
        self.out.forward(&self.hidden.forward(x)?.tanh())
    }

    /// `[rows, classes]`, rows summing to 1.
    pub fn probs(&self, x: &Tensor) -> TResult {
        Ok(self.logits(x)?.softmax())
    }

    /// Negative log-likelihood of `(row, gold label)` pairs.
    pub fn loss(&self, x: &Tensor, gold: &[(usize, &str)]) -> TResult {
        if gold.is_empty() {
            return Ok(Tensor::scalar(0.0));
        }
        let logp = self.logits(x)?.log_softmax();
        let c = self.vocab.len();
        let idx: Vec<usize> = gold.iter().map(|&(r, l)| r * c + self.vocab.index(l)).collect();
        let n = idx.len();
        Ok(logp.gather(idx, &[n])?.sum().neg())
    }

    /// Argmax label per row.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<String>, TensorError> {
        let logits = self.logits(x)?;
        let c = self.vocab.len();
        Ok(logits
            .to_vec()
            .chunks(c)
            .map(|row| self.vocab.token(argmax(row)).to_string())
            .collect())
    }
}

/// Start and end scores of each node over the tokens, `[m, n]` each.
#[derive(Clone, Debug)]
pub struct AnchorScores {
    pub start: Tensor,
    pub end: Tensor,
}

impl AnchorScores {
    pub fn start_probs(&self) -> Tensor {
        self.start.softmax()
    }

    pub fn end_probs(&self) -> Tensor {
        self.end.softmax()
    }
}

/// Biaffine start and end scorers between node states and token states.
#[derive(Clone, Debug)]
pub struct AnchorScorer {
    node_start: Linear,
    token_start: Linear,
    u_start: Tensor,
    b_start: Tensor,
    node_end: Linear,
    token_end: Linear,
    u_end: Tensor,
    b_end: Tensor,
}

impl AnchorScorer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, node_dim: usize, token_dim: usize, dim: usize, rng: &mut R) -> Self {
        AnchorScorer {
            node_start: Linear::new(store, &format!("{name}.node_start"), node_dim, dim, rng),
            token_start: Linear::new(store, &format!("{name}.token_start"), token_dim, dim, rng),
            u_start: store.add(&format!("{name}.u_start"), &[dim, dim], Init::ScaledNormal, rng),
            b_start: store.add(&format!("{name}.b_start"), &[], Init::Zeros, rng),
            node_end: Linear::new(store, &format!("{name}.node_end"), node_dim, dim, rng),
            token_end: Linear::new(store, &format!("{name}.token_end"), token_dim, dim, rng),
            u_end: store.add(&format!("{name}.u_end"), &[dim, dim], Init::ScaledNormal, rng),
            b_end: store.add(&format!("{name}.b_end"), &[], Init::Zeros, rng),
        }
    }

    /// `z` is `[m, node_dim]`, `r` is `[n, token_dim]`.
    pub fn score(&self, z: &Tensor, r: &Tensor) -> Result<AnchorScores, TensorError> {
        let side = |node: &Linear, token: &Linear, u: &Tensor, b: &Tensor| -> TResult {
            biaffine(&node.forward(z)?.tanh(), u, &token.forward(r)?.tanh(), b, 1, true)
        };
        Ok(AnchorScores {
            start: side(&self.node_start, &self.token_start, &self.u_start, &self.b_start)?,
            end: side(&self.node_end, &self.token_end, &self.u_end, &self.b_end)?,
        })
    }
}

/// Cross-entropy of gold start and end tokens for the anchored nodes.
pub fn anchor_loss(scores: &AnchorScores, gold: &[Option<TokenSpan>]) -> TResult {
    let n = scores.start.shape()[1];
    let (mut si, mut ei) = (Vec::new(), Vec::new());
    for (j, span) in gold.iter().enumerate() {
        if let Some(s) = span {
            si.push(j * n + s.start);
            ei.push(j * n + s.end);
        }
    }
    if si.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let k = si.len();
    let start = scores.start.log_softmax().gather(si, &[k])?.sum();
    let end = scores.end.log_softmax().gather(ei, &[k])?.sum();
    Ok(start.add(&end)?.neg())
}

/// Argmax start and end per node; an inverted pair is swapped.
pub fn predict_anchors(start: &[f64], end: &[f64], tokens: usize) -> Vec<TokenSpan> {
    start
        .chunks(tokens)
        .zip(end.chunks(tokens))
        .map(|(s, e)| {
            let (a, b) = (argmax(s), argmax(e));
            TokenSpan::new(a.min(b), a.max(b))
        })
        .collect()
}

pub const ATTR_SEPARATOR: char = '⊕';

fn escape_part(out: &mut String, part: &str) {
    for ch in part.chars() {
        out.push(ch);
        if ch == ATTR_SEPARATOR {
            out.push(ch);
        }
    }
}

/// `("A", ["remote"])` → `"A⊕remote"`. Separators inside parts are doubled;
/// attribute names must be non-empty and must not begin with the separator.
pub fn encode_edge_label(label: &str, attributes: &[String]) -> String {
    let mut out = String::new();
    escape_part(&mut out, label);
    for a in attributes {
        out.push(ATTR_SEPARATOR);
        escape_part(&mut out, a);
    }
    out
}

/// Inverse of [`encode_edge_label`].
pub fn decode_edge_label(composite: &str) -> (String, Vec<String>) {
    let mut parts = vec![String::new()];
    let mut chars = composite.chars().peekable();
    while let Some(ch) = chars.next() {
        if ch == ATTR_SEPARATOR {
            if chars.peek() == Some(&ATTR_SEPARATOR) {
                chars.next();
                parts.last_mut().expect("nonempty").push(ch);
            } else {
                parts.push(String::new());
            }
        } else {
            parts.last_mut().expect("nonempty").push(ch);
        }
    }
    let label = parts.remove(0);
    (label, parts)
}

/// Names of the attributes set to `true` on an edge.
pub fn edge_flags(e: &MrpEdge) -> Vec<String> {
    e.attributes
        .iter()
        .filter(|(_, v)| *v == Value::Bool(true))
        .map(|(k, _)| k.clone())
        .collect()
}

/// Split a composite label back onto an edge as `true` attributes.
pub fn apply_edge_label(e: &mut MrpEdge, composite: &str) {
    let (label, flags) = decode_edge_label(composite);
    e.label = label;
    e.attributes = flags.into_iter().map(|f| (f, Value::Bool(true))).collect();
}
