use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PartScores;
use crate::nn::Linear;
use crate::tensor::{Init, ParamStore, TResult, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeConfig {
    pub edge_dim: usize,
    pub label_dim: usize,
    pub second_dim: usize,
    pub iterations: usize,
    pub second_order: bool,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig {
            edge_dim: 64,
            label_dim: 64,
            second_dim: 32,
            iterations: 3,
            second_order: true,
        }
    }
}

/// Single-layer tanh projection.
#[derive(Clone, Debug)]
struct Fnn(Linear);

impl Fnn {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Fnn(Linear::new(store, name, input, output, rng))
    }

    fn forward(&self, x: &Tensor) -> TResult {
        Ok(self.0.forward(x)?.tanh())
    }
}

/// `out[a, b, k] = x_a · U_k · y_b + bias_k`, with `U` stored as `[d1, c·d2]`.
/// Returns `[m, n, c]`, or `[m, n]` when `c = 1` and `squeeze` is set.
pub fn biaffine(x: &Tensor, u: &Tensor, y: &Tensor, bias: &Tensor, classes: usize, squeeze: bool) -> TResult {
    let (m, n) = (x.shape()[0], y.shape()[0]);
    let d2 = y.shape()[1];
    let xu = x.matmul(u)?.reshape(&[m * classes, d2])?;
    let s = xu.matmul(&y.transpose()?)?.reshape(&[m, classes, n])?.permute(&[0, 2, 1])?;
    if squeeze && classes == 1 {
        s.reshape(&[m, n])?.add(bias)
    } else {
        s.add(bias)
    }
}

/// `out[a, b, c] = Σ_d (x U1)_ad (y U2)_bd (z U3)_cd`, shape `[l, m, n]`.
pub fn trilinear(x: &Tensor, y: &Tensor, z: &Tensor, u: [&Tensor; 3]) -> TResult {
    let a = x.matmul(u[0])?;
    let b = y.matmul(u[1])?;
    let c = z.matmul(u[2])?;
    let (l, m, n, d) = (a.shape()[0], b.shape()[0], c.shape()[0], a.shape()[1]);
    let (mut ia, mut ib) = (Vec::with_capacity(l * m * d), Vec::with_capacity(l * m * d));
    for p in 0..l {
        for q in 0..m {
            for e in 0..d {
                ia.push(p * d + e);
                ib.push(q * d + e);
            }
        }
    }
    let ab = a.gather(ia, &[l * m, d])?.mul(&b.gather(ib, &[l * m, d])?)?;
    ab.matmul(&c.transpose()?)?.reshape(&[l, m, n])
}

/// Differentiable part scores over `m` nodes, row = head.
#[derive(Clone, Debug)]
pub struct TensorParts {
    /// `[m, m]`.
    pub edge: Tensor,
    /// `[m, m, c]`.
    pub label: Tensor,
    /// `[m, m, m]` each, indexed `(i, j, k)` as in [`PartScores`].
    pub sib: Option<Tensor>,
    pub cop: Option<Tensor>,
    pub gp: Option<Tensor>,
}

impl TensorParts {
    pub fn len(&self) -> usize {
        self.edge.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Plain-value copy of the scores, with `edge` set to −∞ outside `mask`.
    pub fn to_plain(&self, mask: Option<&[bool]>) -> PartScores {
        let m = self.len();
        let mut s = PartScores::new(m);
        let edge = self.edge.to_vec();
        for x in 0..m * m {
            s.edge[x] = if mask.is_none_or(|mk| mk[x]) { edge[x] } else { f64::NEG_INFINITY };
        }
        let sib = self.sib.as_ref().map(Tensor::to_vec);
        let cop = self.cop.as_ref().map(Tensor::to_vec);
        let gp = self.gp.as_ref().map(Tensor::to_vec);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let at = (i * m + j) * m + k;
                    if let Some(v) = &sib {
                        s.set_sib(i, j, k, v[at]);
                    }
                    if let Some(v) = &cop {
                        s.set_cop(i, j, k, v[at]);
                    }
                    if let Some(v) = &gp {
                        s.set_gp(i, j, k, v[at]);
                    }
                }
            }
        }
        s
    }
}

/// Result of unrolled mean-field inference.
#[derive(Clone, Debug)]
pub struct MfviOutput {
    /// `s_edge + F` from the last round, `[m, m]`.
    pub logits: Tensor,
    /// `Q = σ(logits)`, zero outside the mask.
    pub q: Tensor,
}

/// Off-diagonal pairs.
pub fn default_mask(m: usize) -> Vec<bool> {
    (0..m * m).map(|x| x / m != x % m).collect()
}

fn constant(shape: &[usize], data: Vec<f64>) -> Result<Tensor, TensorError> {
    Tensor::new(shape, data)
}

/// Differentiable mean-field inference over `iterations` rounds.
pub fn mfvi_logits(parts: &TensorParts, iterations: usize, mask: &[bool]) -> Result<MfviOutput, TensorError> {
    let m = parts.len();
    let vmask = constant(&[m, m], mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
    let mut logits = parts.edge.clone();
    let mut q = logits.sigmoid().mul(&vmask)?;
    let (Some(sib), Some(cop), Some(gp)) = (&parts.sib, &parts.cop, &parts.gp) else {
        return Ok(MfviOutput { logits, q });
    };
    if iterations == 0 {
        return Ok(MfviOutput { logits, q });
    }
    let mut distinct = Vec::with_capacity(m * m * m);
    let mut idx: [Vec<usize>; 4] = Default::default();
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                distinct.push(if i != j && j != k && i != k { 1.0 } else { 0.0 });
                idx[0].push(i * m + k);
                idx[1].push(k * m + j);
                idx[2].push(j * m + k);
                idx[3].push(k * m + i);
            }
        }
    }
    let distinct = constant(&[m, m, m], distinct)?;
    let cube = [m, m, m];
    // gp4[i, j, k] = gp[k, i, j]
    let gp4 = gp.permute(&[1, 2, 0])?;
    let weights = [sib.mul(&distinct)?, cop.mul(&distinct)?, gp.mul(&distinct)?, gp4.mul(&distinct)?];
    for _ in 0..iterations {
        let mut f: Option<Tensor> = None;
        for (w, ix) in weights.iter().zip(&idx) {
            let term = w.mul(&q.gather(ix.clone(), &cube)?)?;
            f = Some(match f {
                None => term,
                Some(acc) => acc.add(&term)?,
            });
        }
        let f = f.expect("four message terms").sum_last();
        logits = parts.edge.add(&f)?;
        q = logits.sigmoid().mul(&vmask)?;
    }
    Ok(MfviOutput { logits, q })
}

/// Binary cross-entropy of the edge posterior over the masked pairs.
pub fn edge_loss(logits: &Tensor, gold: &[bool], mask: &[bool]) -> TResult {
    let shape = logits.shape().to_vec();
    let y = constant(
        &shape,
        gold.iter().zip(mask).map(|(&g, &m)| if g && m { 1.0 } else { 0.0 }).collect(),
    )?;
    let not_y = constant(
        &shape,
        gold.iter().zip(mask).map(|(&g, &m)| if !g && m { 1.0 } else { 0.0 }).collect(),
    )?;
    let pos = logits.log_sigmoid().mul(&y)?;
    let neg = logits.neg().log_sigmoid().mul(&not_y)?;
    Ok(pos.add(&neg)?.sum().neg())
}

/// Cross-entropy of the gold label on each gold edge `(head, dep, label)`.
pub fn label_loss(label: &Tensor, gold: &[(usize, usize, usize)]) -> TResult {
    let (m, c) = (label.shape()[0], label.shape()[2]);
    if gold.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let idx = gold.iter().map(|&(i, j, l)| (i * m + j) * c + l).collect::<Vec<_>>();
    let n = idx.len();
    Ok(label.log_softmax().gather(idx, &[n])?.sum().neg())
}

/// Projections and scoring parameters for all five part families.
#[derive(Clone, Debug)]
pub struct EdgeScorer {
    pub cfg: EdgeConfig,
    pub labels: usize,
    edge_head: Fnn,
    edge_dep: Fnn,
    u_edge: Tensor,
    b_edge: Tensor,
    label_head: Fnn,
    label_dep: Fnn,
    u_label: Tensor,
    b_label: Tensor,
    second: Option<SecondOrder>,
}

#[derive(Clone, Debug)]
struct SecondOrder {
    sib_head: Fnn,
    sib_dep: Fnn,
    cop_head: Fnn,
    cop_dep: Fnn,
    gp_head: Fnn,
    gp_dep: Fnn,
    gp_head_dep: Fnn,
    u_sib: [Tensor; 3],
    u_cop: [Tensor; 3],
    u_gp: [Tensor; 3],
}

impl SecondOrder {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, d: usize, rng: &mut R) -> Self {
        let mut fnn = |part: &str| Fnn::new(store, &format!("{name}.{part}"), input, d, rng);
        let (sib_head, sib_dep, cop_head, cop_dep) = (fnn("sib_head"), fnn("sib_dep"), fnn("cop_head"), fnn("cop_dep"));
        let (gp_head, gp_dep, gp_head_dep) = (fnn("gp_head"), fnn("gp_dep"), fnn("gp_head_dep"));
        let mut u = |family: &str| [0, 1, 2].map(|r| store.add(&format!("{name}.u_{family}{r}"), &[d, d], Init::ScaledNormal, rng));
        let (u_sib, u_cop, u_gp) = (u("sib"), u("cop"), u("gp"));
        SecondOrder {
            sib_head,
            sib_dep,
            cop_head,
            cop_dep,
            gp_head,
            gp_dep,
            gp_head_dep,
            u_sib,
            u_cop,
            u_gp,
        }
    }
}

impl EdgeScorer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, labels: usize, cfg: &EdgeConfig, rng: &mut R) -> Self {
        let (de, dl, ds) = (cfg.edge_dim, cfg.label_dim, cfg.second_dim);
        let edge_head = Fnn::new(store, &format!("{name}.edge_head"), input, de, rng);
        let edge_dep = Fnn::new(store, &format!("{name}.edge_dep"), input, de, rng);
        let label_head = Fnn::new(store, &format!("{name}.label_head"), input, dl, rng);
        let label_dep = Fnn::new(store, &format!("{name}.label_dep"), input, dl, rng);
        let second = cfg.second_order.then(|| SecondOrder::new(store, name, input, ds, rng));
        EdgeScorer {
            cfg: cfg.clone(),
            labels,
            edge_head,
            edge_dep,
            u_edge: store.add(&format!("{name}.u_edge"), &[de, de], Init::ScaledNormal, rng),
            b_edge: store.add(&format!("{name}.b_edge"), &[], Init::Zeros, rng),
            label_head,
            label_dep,
            u_label: store.add(&format!("{name}.u_label"), &[dl, labels * dl], Init::ScaledNormal, rng),
            b_label: store.add(&format!("{name}.b_label"), &[labels], Init::Zeros, rng),
            second,
        }
    }

    /// Score every part for node representations `h` (`[m, input]`).
    pub fn score(&self, h: &Tensor) -> Result<TensorParts, TensorError> {
        let m = h.shape()[0];
        let edge = biaffine(
            &self.edge_head.forward(h)?,
            &self.u_edge,
            &self.edge_dep.forward(h)?,
            &self.b_edge,
            1,
            true,
        )?;
        let label = biaffine(
            &self.label_head.forward(h)?,
            &self.u_label,
            &self.label_dep.forward(h)?,
            &self.b_label,
            self.labels,
            false,
        )?;
        let Some(s) = &self.second else {
            return Ok(TensorParts {
                edge,
                label,
                sib: None,
                cop: None,
                gp: None,
            });
        };
        let (sh, sd) = (s.sib_head.forward(h)?, s.sib_dep.forward(h)?);
        let sib_raw = trilinear(&sh, &sd, &sd, s.u_sib.each_ref())?;
        let (ch, cd) = (s.cop_head.forward(h)?, s.cop_dep.forward(h)?);
        // (i, j, k) with k the second head
        let cop_raw = trilinear(&ch, &cd, &ch, s.u_cop.each_ref())?;
        let gp = trilinear(
            &s.gp_head.forward(h)?,
            &s.gp_head_dep.forward(h)?,
            &s.gp_dep.forward(h)?,
            s.u_gp.each_ref(),
        )?;
        let mut sib_ix = Vec::with_capacity(m * m * m);
        let mut cop_ix = Vec::with_capacity(m * m * m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    sib_ix.push((i * m + j.min(k)) * m + j.max(k));
                    cop_ix.push((i.min(k) * m + j) * m + i.max(k));
                }
            }
        }
        let cube = [m, m, m];
        Ok(TensorParts {
            edge,
            label,
            sib: Some(sib_raw.gather(sib_ix, &cube)?),
            cop: Some(cop_raw.gather(cop_ix, &cube)?),
            gp: Some(gp),
        })
    }
}
