//! Extended pointer-generator node decoder.
//!
//! Each step chooses between copying a previously generated node
//! (`p_tgt`), generating a label from the vocabulary (`p_gen`) and copying a
//! source lemma (`p_src`). Node identity is tracked by `idx`: a copy points
//! at the position of the node it repeats, a new node at its own position.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{EncoderOutput, Linear, Lstm, LstmState, NnError, Vocab};
use crate::tensor::{no_grad, Init, ParamStore, Tensor, TensorError};

pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";

/// Floor applied to step probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub att_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { layers: 2, att_dim: 64 }
    }
}

/// Label vocabulary with the reserved decoder symbols.
pub fn label_vocab<'a, I: IntoIterator<Item = &'a str>>(labels: I, min_freq: usize) -> Vocab {
    Vocab::build_with(labels, min_freq, &[crate::nn::vocab::PAD, crate::nn::vocab::UNK, BOS, EOS])
}

#[derive(Clone, Debug)]
pub struct PointerGenerator {
    pub labels: Vocab,
    hidden: usize,
    /// `[H, V]`; column `u` doubles as the input embedding of label `u`.
    pub w_vocab: Tensor,
    pub b_vocab: Tensor,
    pub lstm: Vec<Lstm>,
    pub w_src: Linear,
    pub u_src: Tensor,
    pub v_src: Tensor,
    pub w_c: Linear,
    pub w_tgt: Linear,
    pub u_tgt: Tensor,
    pub v_tgt: Tensor,
    pub action: Linear,
}

/// Encoder-side quantities fixed for the whole sentence.
#[derive(Clone, Debug)]
pub struct SourceContext {
    pub r: Tensor,
    /// `W_src R + b_src`, `[n, att]`.
    r_proj: Tensor,
    pub lemmas: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct DecoderState {
    layers: Vec<LstmState>,
    z_tilde_prev: Tensor,
    prev_label: usize,
    pub labels: Vec<String>,
    pub idx: Vec<usize>,
    z_cache: Vec<Tensor>,
    tgt_cache: Vec<Tensor>,
}

impl DecoderState {
    pub fn t(&self) -> usize {
        self.labels.len()
    }
}

/// Distributions produced at one step; all rows are `[1, k]`.
#[derive(Clone, Debug)]
pub struct StepDistribution {
    pub a_src: Tensor,
    /// Absent on the first step, when there is nothing to copy.
    pub a_tgt: Option<Tensor>,
    pub p_vocab: Tensor,
    /// `[p_tgt, p_gen, p_src]`.
    pub action: Tensor,
    pub z_tilde: Tensor,
}

/// One candidate outcome of a step with its probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub label: String,
    pub idx: usize,
    pub prob: f64,
}

#[derive(Clone, Debug)]
pub struct Forced {
    /// Probability of each gold step (the end symbol last).
    pub probs: Vec<Tensor>,
    pub dists: Vec<StepDistribution>,
    /// `z̃` of every gold node, end step excluded.
    pub z_tilde: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub labels: Vec<String>,
    pub idx: Vec<usize>,
    pub z_tilde: Vec<Tensor>,
    /// The length cap was hit before the end symbol.
    pub truncated: bool,
}

impl Decoded {
    /// Positions that introduce a new node.
    pub fn originals(&self) -> Vec<usize> {
        (0..self.idx.len()).filter(|&t| self.idx[t] == t).collect()
    }
}

fn attention(keys: &Tensor, query: &Tensor, v: &Tensor) -> Result<Tensor, TensorError> {
    // softmax(vᵀ tanh(keys + query)) over rows of keys
    let n = keys.shape()[0];
    keys.add(&query.reshape(&[query.len()])?)?
        .tanh()
        .matmul(v)?
        .reshape(&[1, n])
        .map(|e| e.softmax())
}

impl PointerGenerator {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &DecoderConfig, labels: Vocab, hidden: usize, rng: &mut R) -> Self {
        let v = labels.len();
        let att = cfg.att_dim;
        let lstm = (0..cfg.layers)
            .map(|l| {
                let input = if l == 0 { 2 * hidden } else { hidden };
                Lstm::new(store, &format!("dec.lstm{l}"), input, hidden, rng)
            })
            .collect();
        PointerGenerator {
            labels,
            hidden,
            w_vocab: store.add("dec.w_vocab", &[hidden, v], Init::ScaledNormal, rng),
            b_vocab: store.add("dec.b_vocab", &[v], Init::Zeros, rng),
            lstm,
            w_src: Linear::new(store, "dec.w_src", hidden, att, rng),
            u_src: store.add("dec.u_src", &[hidden, att], Init::ScaledNormal, rng),
            v_src: store.add("dec.v_src", &[att, 1], Init::ScaledNormal, rng),
            w_c: Linear::new(store, "dec.w_c", 2 * hidden, hidden, rng),
            w_tgt: Linear::new(store, "dec.w_tgt", hidden, att, rng),
            u_tgt: store.add("dec.u_tgt", &[hidden, att], Init::ScaledNormal, rng),
            v_tgt: store.add("dec.v_tgt", &[att, 1], Init::ScaledNormal, rng),
            action: Linear::new(store, "dec.action", hidden, 3, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn label_embedding(&self, id: usize) -> Result<Tensor, TensorError> {
        let v = self.labels.len();
        self.w_vocab
            .gather((0..self.hidden).map(|k| k * v + id).collect(), &[1, self.hidden])
    }

    /// Precompute source projections and the initial state (`z_0 = r_n`).
    pub fn start(&self, enc: &EncoderOutput, lemmas: &[String]) -> Result<(SourceContext, DecoderState), NnError> {
        if enc.is_empty() {
            return Err(NnError::EmptySentence);
        }
        let r_n = enc.last()?;
        let src = SourceContext {
            r: enc.r.clone(),
            r_proj: self.w_src.forward(&enc.r)?,
            lemmas: lemmas.to_vec(),
        };
        let state = DecoderState {
            layers: (0..self.lstm.len())
                .map(|_| LstmState {
                    h: r_n.clone(),
                    c: Tensor::zeros(&[1, self.hidden]),
                })
                .collect(),
            z_tilde_prev: Tensor::zeros(&[1, self.hidden]),
            prev_label: self.labels.index(BOS),
            labels: Vec::new(),
            idx: Vec::new(),
            z_cache: Vec::new(),
            tgt_cache: Vec::new(),
        };
        Ok((src, state))
    }

    /// Run one step from `state`; returns the distributions and the
    /// recurrent state before any outcome is committed.
    pub fn step(&self, src: &SourceContext, state: &DecoderState) -> Result<(StepDistribution, Vec<LstmState>), TensorError> {
        let mut input = Tensor::concat(&[&self.label_embedding(state.prev_label)?, &state.z_tilde_prev], 1)?;
        let mut layers = Vec::with_capacity(self.lstm.len());
        for (cell, prev) in self.lstm.iter().zip(&state.layers) {
            let next = cell.step(&cell.project(&input)?, prev)?;
            input = next.h.clone();
            layers.push(next);
        }
        let z = input;
        let a_src = attention(&src.r_proj, &z.matmul(&self.u_src)?, &self.v_src)?;
        let ctx = a_src.matmul(&src.r)?;
        let z_tilde = self.w_c.forward(&Tensor::concat(&[&ctx, &z], 1)?)?.tanh();
        let p_vocab = z_tilde.matmul(&self.w_vocab)?.add(&self.b_vocab)?.softmax();
        let logits = self.action.forward(&z_tilde)?;
        let (a_tgt, action) = if state.t() == 0 {
            // Nothing to copy yet: renormalise over [gen, src] only.
            let gs = logits.narrow(1, 1, 2)?.softmax();
            (None, Tensor::concat(&[&Tensor::zeros(&[1, 1]), &gs], 1)?)
        } else {
            let refs: Vec<&Tensor> = state.tgt_cache.iter().collect();
            let keys = Tensor::concat(&refs, 0)?;
            let a = attention(&keys, &z_tilde.matmul(&self.u_tgt)?, &self.v_tgt)?;
            (Some(a), logits.softmax())
        };
        Ok((
            StepDistribution {
                a_src,
                a_tgt,
                p_vocab,
                action,
                z_tilde,
            },
            layers,
        ))
    }

    /// Commit an outcome and move to the next step.
    pub fn advance(
        &self,
        state: &mut DecoderState,
        dist: &StepDistribution,
        layers: Vec<LstmState>,
        label: &str,
        idx: usize,
    ) -> Result<(), TensorError> {
        state.layers = layers;
        state.z_tilde_prev = dist.z_tilde.clone();
        state.prev_label = self.labels.index(label);
        state.tgt_cache.push(self.w_tgt.forward(&dist.z_tilde)?);
        state.z_cache.push(dist.z_tilde.clone());
        state.labels.push(label.to_string());
        state.idx.push(idx);
        Ok(())
    }

    /// `P(node)` of outcome (`label`, `idx`) at the state's current step, as
    /// a differentiable scalar.
    pub fn outcome_probability(
        &self,
        src: &SourceContext,
        state: &DecoderState,
        dist: &StepDistribution,
        label: &str,
        idx: usize,
    ) -> Result<Tensor, TensorError> {
        let t = state.t();
        if idx < t {
            let same: Vec<usize> = (0..t).filter(|&i| state.labels[i] == label).collect();
            let Some(a_tgt) = &dist.a_tgt else {
                return Ok(Tensor::scalar(0.0));
            };
            if same.is_empty() {
                return Ok(Tensor::scalar(0.0));
            }
            let n = same.len();
            let mass = a_tgt.gather(same, &[n])?.sum();
            return dist.action.gather(vec![0], &[])?.mul(&mass);
        }
        let p_gen = dist.action.gather(vec![1], &[])?;
        let mut prob = match self.labels.get(label) {
            Some(id) => p_gen.mul(&dist.p_vocab.gather(vec![id], &[])?)?,
            None => Tensor::scalar(0.0),
        };
        let hits: Vec<usize> = (0..src.lemmas.len()).filter(|&i| src.lemmas[i] == label).collect();
        if !hits.is_empty() {
            let n = hits.len();
            let p_src = dist.action.gather(vec![2], &[])?;
            prob = prob.add(&p_src.mul(&dist.a_src.gather(hits, &[n])?.sum())?)?;
        }
        Ok(prob)
    }

    /// Every distinct outcome of a step with its probability.
    pub fn outcomes(&self, src: &SourceContext, state: &DecoderState, dist: &StepDistribution) -> Vec<Outcome> {
        let t = state.t();
        let action = dist.action.to_vec();
        let mut out = Vec::new();
        if let Some(a_tgt) = &dist.a_tgt {
            let a = a_tgt.to_vec();
            let mut seen: Vec<&str> = Vec::new();
            for i in 0..t {
                let label = state.labels[i].as_str();
                if seen.contains(&label) {
                    continue;
                }
                seen.push(label);
                let group: Vec<usize> = (0..t).filter(|&k| state.labels[k] == label).collect();
                let best = *group
                    .iter()
                    .max_by(|&&x, &&y| a[x].total_cmp(&a[y]).then(y.cmp(&x)))
                    .expect("non-empty group");
                out.push(Outcome {
                    label: label.to_string(),
                    idx: state.idx[best],
                    prob: action[0] * group.iter().map(|&k| a[k]).sum::<f64>(),
                });
            }
        }
        let pv = dist.p_vocab.to_vec();
        let a_src = dist.a_src.to_vec();
        let mut src_mass: Vec<(&str, f64)> = Vec::new();
        for (i, l) in src.lemmas.iter().enumerate() {
            match src_mass.iter_mut().find(|(k, _)| *k == l) {
                Some(slot) => slot.1 += a_src[i],
                None => src_mass.push((l, a_src[i])),
            }
        }
        for (id, label) in self.labels.tokens().iter().enumerate() {
            let copy = src_mass.iter().find(|(k, _)| *k == label).map_or(0.0, |s| s.1);
            out.push(Outcome {
                label: label.clone(),
                idx: t,
                prob: action[1] * pv[id] + action[2] * copy,
            });
        }
        for (label, mass) in src_mass {
            if self.labels.get(label).is_none() {
                out.push(Outcome {
                    label: label.to_string(),
                    idx: t,
                    prob: action[2] * mass,
                });
            }
        }
        out
    }

    /// Teacher-forced pass over a gold sequence; the end symbol is appended.
    pub fn decode_forced(&self, enc: &EncoderOutput, lemmas: &[String], gold: &[(String, usize)]) -> Result<Forced, NnError> {
        let (src, mut state) = self.start(enc, lemmas)?;
        let mut probs = Vec::with_capacity(gold.len() + 1);
        let mut dists = Vec::with_capacity(gold.len() + 1);
        let steps = gold.iter().cloned().chain(std::iter::once((EOS.to_string(), gold.len())));
        for (label, idx) in steps {
            let (dist, layers) = self.step(&src, &state)?;
            probs.push(self.outcome_probability(&src, &state, &dist, &label, idx)?);
            self.advance(&mut state, &dist, layers, &label, idx)?;
            dists.push(dist);
        }
        let z_tilde = state.z_cache[..gold.len()].to_vec();
        Ok(Forced { probs, dists, z_tilde })
    }

    /// Greedy decoding, capped at `2n + 10` steps.
    pub fn decode_greedy(&self, enc: &EncoderOutput, lemmas: &[String]) -> Result<Decoded, NnError> {
        no_grad(|| {
            let (src, mut state) = self.start(enc, lemmas)?;
            let cap = 2 * enc.len() + 10;
            let reserved = [crate::nn::vocab::PAD, crate::nn::vocab::UNK, BOS];
            while state.t() < cap {
                let (dist, layers) = self.step(&src, &state)?;
                let best = self
                    .outcomes(&src, &state, &dist)
                    .into_iter()
                    .filter(|o| !reserved.contains(&o.label.as_str()))
                    .fold(None::<Outcome>, |acc, o| match acc {
                        Some(a) if a.prob >= o.prob => Some(a),
                        _ => Some(o),
                    })
                    .expect("vocabulary has EOS");
                if best.label == EOS && best.idx == state.t() {
                    let z_tilde = state.z_cache.clone();
                    return Ok(Decoded {
                        labels: state.labels,
                        idx: state.idx,
                        z_tilde,
                        truncated: false,
                    });
                }
                self.advance(&mut state, &dist, layers, &best.label, best.idx)?;
            }
            let z_tilde = state.z_cache.clone();
            Ok(Decoded {
                labels: state.labels,
                idx: state.idx,
                z_tilde,
                truncated: true,
            })
        })
    }

    /// Re-run a fixed sequence to obtain its `z̃` rows with gradients.
    pub fn node_states(&self, enc: &EncoderOutput, lemmas: &[String], seq: &[(String, usize)]) -> Result<Vec<Tensor>, NnError> {
        let (src, mut state) = self.start(enc, lemmas)?;
        for (label, idx) in seq {
            let (dist, layers) = self.step(&src, &state)?;
            self.advance(&mut state, &dist, layers, label, *idx)?;
        }
        Ok(state.z_cache)
    }
}

/// `-Σ ln max(P_t, floor)` over the forced steps.
pub fn node_loss(forced: &Forced) -> Result<Tensor, TensorError> {
    let logs: Vec<Tensor> = forced
        .probs
        .iter()
        .map(|p| p.reshape(&[1]).map(|p| p.clamp_min(PROB_FLOOR).ln()))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&Tensor> = logs.iter().collect();
    Ok(Tensor::concat(&refs, 0)?.sum().neg())
}
