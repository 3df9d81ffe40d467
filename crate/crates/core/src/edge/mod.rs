//! Second-order edge inference: part scores, mean-field posterior updates,
//! an exact enumeration oracle for small instances, and edge decoding.
//!
//! Throughout, edge `(i, j)` runs from head `i` to dependent `j`.

mod scorer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::tensor::scalar_sigmoid as sigmoid;

pub use scorer::{biaffine, default_mask, edge_loss, label_loss, mfvi_logits, trilinear, EdgeConfig, EdgeScorer, MfviOutput, TensorParts};

/// Plain-value part scores for `n` nodes.
///
/// Sibling scores are stored once per unordered dependent pair and
/// co-parent scores once per unordered head pair, so both are symmetric by
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PartScores {
    pub n: usize,
    /// `n × n`, row = head.
    pub edge: Vec<f64>,
    sib: Vec<f64>,
    cop: Vec<f64>,
    gp: Vec<f64>,
}

impl PartScores {
    pub fn new(n: usize) -> Self {
        PartScores {
            n,
            edge: vec![0.0; n * n],
            sib: vec![0.0; n * n * n],
            cop: vec![0.0; n * n * n],
            gp: vec![0.0; n * n * n],
        }
    }

    fn at(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.n + b) * self.n + c
    }

    pub fn edge(&self, i: usize, j: usize) -> f64 {
        self.edge[i * self.n + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, v: f64) {
        self.edge[i * self.n + j] = v;
    }

    /// `s_sib(ij, ik)`.
    pub fn sib(&self, i: usize, j: usize, k: usize) -> f64 {
        self.sib[self.at(i, j.min(k), j.max(k))]
    }

    pub fn set_sib(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let at = self.at(i, j.min(k), j.max(k));
        self.sib[at] = v;
    }

    /// `s_cop(ij, kj)`.
    pub fn cop(&self, i: usize, j: usize, k: usize) -> f64 {
        self.cop[self.at(i.min(k), j, i.max(k))]
    }

    pub fn set_cop(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let at = self.at(i.min(k), j, i.max(k));
        self.cop[at] = v;
    }

    /// `s_gp(ij, jk)`.
    pub fn gp(&self, i: usize, j: usize, k: usize) -> f64 {
        self.gp[self.at(i, j, k)]
    }

    pub fn set_gp(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let at = self.at(i, j, k);
        self.gp[at] = v;
    }

    /// Off-diagonal pairs with a finite unary score.
    pub fn candidates(&self) -> Vec<bool> {
        let n = self.n;
        (0..n * n).map(|x| x / n != x % n && self.edge[x].is_finite()).collect()
    }

    /// Zero every second-order score.
    pub fn first_order(&self) -> Self {
        PartScores {
            sib: vec![0.0; self.sib.len()],
            cop: vec![0.0; self.cop.len()],
            gp: vec![0.0; self.gp.len()],
            ..self.clone()
        }
    }
}

/// Bernoulli edge marginals `Q_ij(1)`, row = head.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePosterior {
    pub n: usize,
    pub q: Vec<f64>,
    pub iterations: usize,
}

impl EdgePosterior {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n + j]
    }

    /// Text block with one row per head, for debugging.
    pub fn to_matrix_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| format!("{:.4}", self.get(i, j))).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// The mean-field message `F_ij` for every pair, given the current `Q`.
pub fn mean_field_messages(s: &PartScores, q: &[f64]) -> Vec<f64> {
    let n = s.n;
    let qa = |a: usize, b: usize| q[a * n + b];
    let mut f = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut acc = 0.0;
            for k in 0..n {
                if k == i || k == j {
                    continue;
                }
                acc += qa(i, k) * s.sib(i, j, k) + qa(k, j) * s.cop(i, j, k) + qa(j, k) * s.gp(i, j, k) + qa(k, i) * s.gp(k, i, j);
            }
            f[i * n + j] = acc;
        }
    }
    f
}

/// Mean-field inference: `Q⁰ = σ(s_edge)`, then `T` rounds of
/// `Q = σ(s_edge + F(Q))`. Pairs outside `mask` (default: off-diagonal
/// pairs with finite unary score) stay at 0.
pub fn mfvi_infer(s: &PartScores, iterations: usize, mask: Option<&[bool]>) -> EdgePosterior {
    let n = s.n;
    let default_mask = s.candidates();
    let mask = mask.unwrap_or(&default_mask);
    let squash = |logits: &[f64]| -> Vec<f64> { (0..n * n).map(|x| if mask[x] { sigmoid(logits[x]) } else { 0.0 }).collect() };
    let mut q = squash(&s.edge);
    for _ in 0..iterations {
        let f = mean_field_messages(s, &q);
        let logits: Vec<f64> = s.edge.iter().zip(&f).map(|(a, b)| a + b).collect();
        q = squash(&logits);
    }
    EdgePosterior { n, q, iterations }
}

#[derive(Debug, Error, PartialEq)]
pub enum ExactError {
    #[error("{0} candidate edges exceed the enumeration limit of {max}", max = MAX_EXACT_EDGES)]
    TooManyEdges(usize),
}

pub const MAX_EXACT_EDGES: usize = 20;

/// True marginals by enumerating every assignment of the candidate edges.
pub fn exact_marginals(s: &PartScores) -> Result<EdgePosterior, ExactError> {
    let n = s.n;
    let cand = s.candidates();
    let edges: Vec<(usize, usize)> = (0..n * n).filter(|&x| cand[x]).map(|x| (x / n, x % n)).collect();
    let e = edges.len();
    if e > MAX_EXACT_EDGES {
        return Err(ExactError::TooManyEdges(e));
    }
    // pair[a][b]: binary score when edges a and b are both on
    let mut pair = vec![0.0; e * e];
    for a in 0..e {
        for b in a + 1..e {
            let ((i, j), (k, l)) = (edges[a], edges[b]);
            let mut v = 0.0;
            if i == k && j != l {
                v += s.sib(i, j, l);
            }
            if j == l && i != k {
                v += s.cop(i, j, k);
            }
            if j == k && l != i {
                v += s.gp(i, j, l);
            }
            if l == i && j != k {
                v += s.gp(k, i, j);
            }
            pair[a * e + b] = v;
        }
    }
    let unary: Vec<f64> = edges.iter().map(|&(i, j)| s.edge(i, j)).collect();
    let mut log_w = Vec::with_capacity(1 << e);
    for mask in 0u32..(1u32 << e) {
        let mut w = 0.0;
        for a in 0..e {
            if mask >> a & 1 == 1 {
                w += unary[a];
                for b in a + 1..e {
                    if mask >> b & 1 == 1 {
                        w += pair[a * e + b];
                    }
                }
            }
        }
        log_w.push(w);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|w| (w - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut q = vec![0.0; n * n];
    for (a, &(i, j)) in edges.iter().enumerate() {
        let on: f64 = weights.iter().enumerate().filter(|(m, _)| m >> a & 1 == 1).map(|(_, w)| w).sum();
        q[i * n + j] = on / z;
    }
    Ok(EdgePosterior { n, q, iterations: 0 })
}

fn symmetric<R: Rng>(rng: &mut R, a: f64) -> f64 {
    if a > 0.0 {
        rng.gen_range(-a..a)
    } else {
        0.0
    }
}

/// Scores for `n` nodes: unary scores uniform on `(-unary, unary)` and every
/// pair score uniform on `(-binary, binary)`.
pub fn random_scores<R: Rng>(rng: &mut R, n: usize, unary: f64, binary: f64) -> PartScores {
    let mut s = PartScores::new(n);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            s.set_edge(i, j, symmetric(rng, unary));
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i == j || j == k || i == k {
                    continue;
                }
                if j < k {
                    s.set_sib(i, j, k, symmetric(rng, binary));
                }
                if i < k {
                    s.set_cop(i, j, k, symmetric(rng, binary));
                }
                s.set_gp(i, j, k, symmetric(rng, binary));
            }
        }
    }
    s
}

/// Mean-field posteriors against exact enumeration on random instances.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleSummary {
    pub instances: usize,
    pub iterations: usize,
    /// Largest marginal error with all pair scores zero.
    pub factorized_max_error: f64,
    /// Mean and largest marginal error with pair scores in `(-0.5, 0.5)`.
    pub second_order_mean_error: f64,
    pub second_order_max_error: f64,
}

/// Instances have 2 to 4 nodes and unary scores in `(-2, 2)`.
pub fn oracle_check(seed: u64, instances: usize, iterations: usize) -> Result<OracleSummary, ExactError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fact_max: f64 = 0.0;
    let (mut sum, mut count, mut max): (f64, usize, f64) = (0.0, 0, 0.0);
    for _ in 0..instances {
        let n = rng.gen_range(2..=4);
        let unary = random_scores(&mut rng, n, 2.0, 0.0);
        let (q, exact) = (mfvi_infer(&unary, iterations, None), exact_marginals(&unary)?);
        for (a, b) in q.q.iter().zip(&exact.q) {
            fact_max = fact_max.max((a - b).abs());
        }
        let full = random_scores(&mut rng, n, 2.0, 0.5);
        let (q, exact) = (mfvi_infer(&full, iterations, None), exact_marginals(&full)?);
        let cand = full.candidates();
        for x in (0..n * n).filter(|&x| cand[x]) {
            let e = (q.q[x] - exact.q[x]).abs();
            sum += e;
            count += 1;
            max = max.max(e);
        }
    }
    Ok(OracleSummary {
        instances,
        iterations,
        factorized_max_error: fact_max,
        second_order_mean_error: if count == 0 { 0.0 } else { sum / count as f64 },
        second_order_max_error: max,
    })
}

/// A decoded edge with its label index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodedEdge {
    pub head: usize,
    pub dep: usize,
    pub label: usize,
}

/// Keep `(i, j)` iff `Q_ij > 0.5`; label by argmax of the label scores
/// (`n × n × c`), lowest index on ties.
pub fn decode_graph(q: &EdgePosterior, s_label: &[f64], labels: usize) -> Vec<DecodedEdge> {
    let n = q.n;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if q.get(i, j) <= 0.5 {
                continue;
            }
            let row = &s_label[(i * n + j) * labels..(i * n + j + 1) * labels];
            let mut best = 0;
            for c in 1..labels {
                if row[c] > row[best] {
                    best = c;
                }
            }
            out.push(DecodedEdge {
                head: i,
                dep: j,
                label: best,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_siblings() -> PartScores {
        let mut s = PartScores::new(3);
        s.edge.fill(f64::NEG_INFINITY);
        s.set_edge(0, 1, 0.0);
        s.set_edge(0, 2, 0.0);
        s.set_sib(0, 1, 2, 2f64.ln());
        s
    }

    #[test]
    fn sibling_case_exact_is_three_fifths() {
        let q = exact_marginals(&two_siblings()).unwrap();
        assert!((q.get(0, 1) - 0.6).abs() < 1e-12);
        assert!((q.get(0, 2) - 0.6).abs() < 1e-12);
        let m = mfvi_infer(&two_siblings(), 5, None);
        assert!((m.get(0, 1) - 0.6).abs() <= 0.02, "{}", m.get(0, 1));
    }

    #[test]
    fn single_edge_ln3() {
        let mut s = PartScores::new(2);
        s.edge.fill(f64::NEG_INFINITY);
        s.set_edge(0, 1, 3f64.ln());
        let q = exact_marginals(&s).unwrap();
        assert!((q.get(0, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn storage_is_symmetric() {
        let mut s = PartScores::new(4);
        s.set_sib(0, 3, 1, 0.7);
        assert_eq!(s.sib(0, 1, 3), 0.7);
        s.set_cop(2, 1, 0, -0.3);
        assert_eq!(s.cop(0, 1, 2), -0.3);
    }

    #[test]
    fn too_many_edges() {
        let s = PartScores::new(6);
        assert_eq!(exact_marginals(&s), Err(ExactError::TooManyEdges(30)));
    }

    #[test]
    fn zero_iterations_is_initialisation() {
        let mut s = PartScores::new(3);
        s.set_edge(0, 1, 1.5);
        s.set_sib(0, 1, 2, 4.0);
        let q = mfvi_infer(&s, 0, None);
        assert_eq!(q.get(0, 1), sigmoid(1.5));
        assert_eq!(q.get(1, 1), 0.0);
    }

    #[test]
    fn decode_thresholds_and_labels() {
        let q = EdgePosterior {
            n: 2,
            q: vec![0.0, 0.9, 0.4, 0.0],
            iterations: 0,
        };
        let labels = vec![0.0, 0.0, 1.0, 5.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(decode_graph(&q, &labels, 2), vec![DecodedEdge { head: 0, dep: 1, label: 1 }]);
        let shifted: Vec<f64> = labels.iter().map(|v| v + 3.0).collect();
        assert_eq!(decode_graph(&q, &shifted, 2), decode_graph(&q, &labels, 2));
    }
}
