#![allow(dead_code)]

pub mod graphs;

use mrparse::decoder::{label_vocab, node_loss, DecoderConfig, PointerGenerator};
use mrparse::edge::{biaffine, trilinear, EdgeConfig, EdgeScorer, PartScores};
use mrparse::graph::Framework;
use mrparse::heads::{anchor_loss, AnchorScorer, Classifier};
use mrparse::model::{LossWeights, Model, ModelConfig, ModelVocabs};
use mrparse::nn::{BiLstm, EncoderConfig, EncoderOutput, Vocab};
use mrparse::pipeline::{prepare, Instance, Resources};
use mrparse::prep::TokenSpan;
use mrparse::synth::gen_synthetic;
use mrparse::tensor::{no_grad, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A model small enough for exhaustive finite differences.
pub fn micro_config(framework: Framework) -> ModelConfig {
    ModelConfig {
        framework,
        encoder: EncoderConfig {
            word_dim: 3,
            pos_dim: 2,
            lemma_dim: 2,
            char_emb_dim: 2,
            char_dim: 2,
            ner_dim: 2,
            hidden: 3,
            layers: 1,
        },
        decoder: DecoderConfig { layers: 1, att_dim: 3 },
        edge: EdgeConfig {
            edge_dim: 3,
            label_dim: 2,
            second_dim: 2,
            iterations: 3,
            second_order: true,
        },
        classifier_hidden: 3,
        anchor_dim: 2,
        label_min_freq: 1,
        weights: LossWeights::default(),
    }
}

fn central_difference(f: &dyn Fn() -> Tensor, p: &Tensor, i: usize, h: f64) -> f64 {
    let x = p.data()[i];
    p.data_mut()[i] = x + h;
    let plus = no_grad(|| f().item());
    p.data_mut()[i] = x - h;
    let minus = no_grad(|| f().item());
    p.data_mut()[i] = x;
    (plus - minus) / (2.0 * h)
}

/// Largest error between backward-pass and central-difference gradients,
/// relative to `max(|analytic|, |numeric|, 1)`, over at most `per_param`
/// randomly chosen entries of each parameter.
pub fn gradient_error<R: Rng>(f: &dyn Fn() -> Tensor, params: &[Tensor], per_param: usize, rng: &mut R) -> f64 {
    params.iter().for_each(Tensor::zero_grad);
    f().backward().unwrap();
    let mut worst = 0.0f64;
    for p in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.len()]);
        let mut entries: Vec<usize> = (0..p.len()).collect();
        if entries.len() > per_param {
            for k in 0..per_param {
                let j = rng.gen_range(k..entries.len());
                entries.swap(k, j);
            }
            entries.truncate(per_param);
        }
        for i in entries {
            let n = central_difference(f, p, i, 1e-5);
            let err = (analytic[i] - n).abs() / analytic[i].abs().max(n.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    params.iter().for_each(Tensor::zero_grad);
    worst
}

/// A fixed random weighting that turns a tensor into a scalar.
pub fn probe<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn param<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub const GRAD_SEEDS: u64 = 20;
pub const GRAD_TOLERANCE: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn biaffine_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, n, d1, d2, c) = (3, 4, 3, 2, 3);
    let x = param(&[m, d1], &mut r);
    let y = param(&[n, d2], &mut r);
    let u = param(&[d1, c * d2], &mut r);
    let b = param(&[c], &mut r);
    let w = probe(&[m, n, c], &mut r);
    let f = || biaffine(&x, &u, &y, &b, c, false).unwrap().mul(&w).unwrap().sum();
    gradient_error(&f, &[x.clone(), y.clone(), u.clone(), b.clone()], usize::MAX, &mut r)
}

pub fn trilinear_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (l, m, n, d, k) = (2, 3, 3, 3, 2);
    let x = param(&[l, d], &mut r);
    let y = param(&[m, d], &mut r);
    let z = param(&[n, d], &mut r);
    let us = [param(&[d, k], &mut r), param(&[d, k], &mut r), param(&[d, k], &mut r)];
    let w = probe(&[l, m, n], &mut r);
    let f = || trilinear(&x, &y, &z, [&us[0], &us[1], &us[2]]).unwrap().mul(&w).unwrap().sum();
    let mut ps = vec![x.clone(), y.clone(), z.clone()];
    ps.extend(us.iter().cloned());
    gradient_error(&f, &ps, usize::MAX, &mut r)
}

pub fn bilstm_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "bi", 3, 2, 2, &mut r);
    let x = param(&[4, 3], &mut r);
    let w = probe(&[4, 4], &mut r);
    let f = || lstm.forward(&x).unwrap().mul(&w).unwrap().sum();
    let mut ps = store.tensors();
    ps.push(x.clone());
    gradient_error(&f, &ps, 6, &mut r)
}

/// Two decoder steps into a gold sequence that exercises generation,
/// source copy and target copy, then the step distributions at `t = 3`.
pub fn pointer_generator_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let hidden = 4;
    let labels = label_vocab(["want", "person", "go"], 1);
    let dec = PointerGenerator::new(&mut store, &DecoderConfig { layers: 1, att_dim: 3 }, labels, hidden, &mut r);
    let enc = EncoderOutput {
        r: param(&[3, hidden], &mut r),
    };
    let lemmas: Vec<String> = ["boy", "want", "go"].iter().map(|s| s.to_string()).collect();
    let gold: Vec<(String, usize)> = vec![("want".into(), 0), ("boy".into(), 1), ("want".into(), 0)];
    let (wv, ws, wt, wa) = (
        probe(&[1, 7], &mut r),
        probe(&[1, 3], &mut r),
        probe(&[1, 3], &mut r),
        probe(&[1, 3], &mut r),
    );
    let f = || {
        let forced = dec.decode_forced(&enc, &lemmas, &gold).unwrap();
        let d = &forced.dists[3];
        let extra = [
            d.p_vocab.mul(&wv).unwrap().sum(),
            d.a_src.mul(&ws).unwrap().sum(),
            d.a_tgt.as_ref().unwrap().mul(&wt).unwrap().sum(),
            d.action.mul(&wa).unwrap().sum(),
        ];
        extra.iter().fold(node_loss(&forced).unwrap(), |acc, t| acc.add(t).unwrap())
    };
    let mut ps = store.tensors();
    ps.push(enc.r.clone());
    gradient_error(&f, &ps, 4, &mut r)
}

pub fn anchor_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let scorer = AnchorScorer::new(&mut store, "anchor", 3, 4, 2, &mut r);
    let z = param(&[3, 3], &mut r);
    let tokens = param(&[5, 4], &mut r);
    let gold = [Some(TokenSpan::new(0, 2)), None, Some(TokenSpan::new(4, 4))];
    let f = || anchor_loss(&scorer.score(&z, &tokens).unwrap(), &gold).unwrap();
    let mut ps = store.tensors();
    ps.push(z.clone());
    ps.push(tokens.clone());
    gradient_error(&f, &ps, usize::MAX, &mut r)
}

/// Shortest synthetic instance with a micro model built over its corpus.
pub fn micro_model(framework: Framework, seed: u64) -> (Model, Instance) {
    let corpus = gen_synthetic(framework, 6, seed);
    let res = Resources::build(framework, &corpus);
    let instances: Vec<Instance> = corpus.iter().map(|(g, c)| prepare(g, c, &res).unwrap()).collect();
    let cfg = micro_config(framework);
    let vocabs = ModelVocabs::build(framework, &instances, cfg.label_min_freq);
    let model = Model::new(cfg, vocabs, res, seed);
    let inst = instances.into_iter().min_by_key(|i| i.input.sentence.tokens.len()).unwrap();
    (model, inst)
}

/// The full unrolled training loss, every term enabled.
pub fn model_loss_case(framework: Framework, seed: u64) -> f64 {
    let (model, inst) = micro_model(framework, seed);
    let w = model.cfg.weights;
    let f = || model.loss(&inst).unwrap().total(&w).unwrap();
    gradient_error(&f, &model.store.tensors(), 2, &mut rng(seed))
}

/// Unnormalised log-score of an assignment `y` (`n × n`, row = head),
/// summing each factor once over its own index set.
pub fn assignment_score(s: &PartScores, y: &[bool]) -> f64 {
    let n = s.n;
    let on = |a: usize, b: usize| a != b && y[a * n + b];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if on(i, j) {
                total += s.edge(i, j);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i == j || j == k || i == k {
                    continue;
                }
                if j < k && on(i, j) && on(i, k) {
                    total += s.sib(i, j, k);
                }
                if i < k && on(i, j) && on(k, j) {
                    total += s.cop(i, j, k);
                }
                if on(i, j) && on(j, k) {
                    total += s.gp(i, j, k);
                }
            }
        }
    }
    total
}

/// Brute-force marginals over every directed off-diagonal pair whose unary
/// score is finite.
pub fn brute_marginals(s: &PartScores) -> Vec<f64> {
    let n = s.n;
    let vars: Vec<usize> = (0..n * n).filter(|&x| x / n != x % n && s.edge[x].is_finite()).collect();
    let mut z = 0.0;
    let mut on = vec![0.0; n * n];
    for bits in 0u64..(1 << vars.len()) {
        let mut y = vec![false; n * n];
        for (b, &x) in vars.iter().enumerate() {
            y[x] = bits >> b & 1 == 1;
        }
        let w = assignment_score(s, &y).exp();
        z += w;
        for &x in &vars {
            if y[x] {
                on[x] += w;
            }
        }
    }
    on.iter().map(|v| v / z).collect()
}

/// Mean-field rounds written directly from the coordinate update.
pub fn reference_mfvi(s: &PartScores, iterations: usize) -> Vec<f64> {
    let n = s.n;
    let live = |x: usize| x / n != x % n && s.edge[x].is_finite();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut q: Vec<f64> = (0..n * n).map(|x| if live(x) { sig(s.edge[x]) } else { 0.0 }).collect();
    for _ in 0..iterations {
        let mut next = vec![0.0; n * n];
        for x in (0..n * n).filter(|&x| live(x)) {
            let (i, j) = (x / n, x % n);
            let mut f = 0.0;
            for k in (0..n).filter(|&k| k != i && k != j) {
                f += s.sib(i, j, k) * q[i * n + k];
                f += s.cop(i, j, k) * q[k * n + j];
                f += s.gp(i, j, k) * q[j * n + k];
                f += s.gp(k, i, j) * q[k * n + i];
            }
            next[x] = sig(s.edge[x] + f);
        }
        q = next;
    }
    q
}

pub fn sibling_case() -> PartScores {
    let mut s = PartScores::new(3);
    s.edge.fill(f64::NEG_INFINITY);
    s.set_edge(0, 1, 0.0);
    s.set_edge(0, 2, 0.0);
    s.set_sib(0, 1, 2, 2f64.ln());
    s
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn row_deviation(t: &Tensor) -> f64 {
    let d = *t.shape().last().unwrap();
    t.to_vec()
        .chunks(d)
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Largest `|Σp − 1|` per distribution family on random components whose
/// inputs are scaled by `scale`.
pub fn normalization_deviations(seed: u64, scale: f64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let hidden = 4;
    let labels = label_vocab(["want", "person", "go", "boy"], 1);
    let dec = PointerGenerator::new(&mut store, &DecoderConfig { layers: 2, att_dim: 3 }, labels, hidden, &mut r);
    let n = r.gen_range(1..6);
    let enc = EncoderOutput {
        r: probe(&[n, hidden], &mut r).scale(scale),
    };
    let lemmas: Vec<String> = (0..n).map(|i| ["boy", "want", "go", "city"][i % 4].to_string()).collect();
    let (src, mut state) = dec.start(&enc, &lemmas).unwrap();
    let mut out = vec![("a_src", 0.0), ("a_tgt", 0.0), ("p_vocab", 0.0), ("action", 0.0), ("outcomes", 0.0)];
    for _ in 0..5 {
        let (dist, layers) = dec.step(&src, &state).unwrap();
        out[0].1 = f64::max(out[0].1, row_deviation(&dist.a_src));
        if let Some(a) = &dist.a_tgt {
            out[1].1 = f64::max(out[1].1, row_deviation(a));
        }
        out[2].1 = f64::max(out[2].1, row_deviation(&dist.p_vocab));
        out[3].1 = f64::max(out[3].1, row_deviation(&dist.action));
        let outcomes = dec.outcomes(&src, &state, &dist);
        out[4].1 = f64::max(out[4].1, (outcomes.iter().map(|o| o.prob).sum::<f64>() - 1.0).abs());
        let pick = &outcomes[r.gen_range(0..outcomes.len())];
        let (label, idx) = (pick.label.clone(), pick.idx);
        dec.advance(&mut state, &dist, layers, &label, idx).unwrap();
    }
    let m = r.gen_range(1..5);
    let z = probe(&[m, 3], &mut r).scale(scale);
    let props = Classifier::new(&mut store, "prop", 3, 4, Vocab::build(["a", "b", "c"], 1), &mut r);
    out.push(("p_prop", row_deviation(&props.probs(&z).unwrap())));
    let anchors = AnchorScorer::new(&mut store, "anchor", 3, hidden, 3, &mut r);
    let scores = anchors.score(&z, &enc.r).unwrap();
    out.push(("anchor_start", row_deviation(&scores.start_probs())));
    out.push(("anchor_end", row_deviation(&scores.end_probs())));
    let edge_cfg = EdgeConfig {
        edge_dim: 3,
        label_dim: 3,
        second_dim: 2,
        iterations: 3,
        second_order: true,
    };
    let edges = EdgeScorer::new(&mut store, "edge", 3, 5, &edge_cfg, &mut r);
    out.push(("label", row_deviation(&edges.score(&z).unwrap().label.softmax())));
    out
}
