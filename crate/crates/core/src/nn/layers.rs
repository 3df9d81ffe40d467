use rand::Rng;

use crate::tensor::{Init, ParamStore, TResult, Tensor};

/// `y = x W + b` over rows of `x`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            w: store.add(&format!("{name}.w"), &[input, output], Init::ScaledNormal, rng),
            b: store.add(&format!("{name}.b"), &[output], Init::Zeros, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> TResult {
        x.matmul(&self.w)?.add(&self.b)
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape()[1]
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut R) -> Self {
        Embedding {
            table: store.add(&format!("{name}.table"), &[rows, dim], Init::Uniform(0.1), rng),
        }
    }

    pub fn forward(&self, ids: &[usize]) -> TResult {
        self.table.index_rows(ids)
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }
}

/// One LSTM direction. Gates are laid out `[input, forget, cell, output]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub b: Tensor,
}

/// Hidden and cell rows, each `[1, h]`.
#[derive(Clone, Debug)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[1, hidden]),
            c: Tensor::zeros(&[1, hidden]),
        }
    }
}

impl Lstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let b = store.add(&format!("{name}.b"), &[4 * hidden], Init::Zeros, rng);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        Lstm {
            w_ih: store.add(&format!("{name}.w_ih"), &[input, 4 * hidden], Init::ScaledNormal, rng),
            w_hh: store.add(&format!("{name}.w_hh"), &[hidden, 4 * hidden], Init::ScaledNormal, rng),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[0]
    }

    /// Input projections for a whole sequence, `[n, 4h]`, bias included.
    pub fn project(&self, x: &Tensor) -> TResult {
        x.matmul(&self.w_ih)?.add(&self.b)
    }

    /// One step given a pre-projected input row `[1, 4h]`.
    pub fn step(&self, xproj: &Tensor, state: &LstmState) -> Result<LstmState, crate::tensor::TensorError> {
        let h = self.hidden();
        let pre = xproj.add(&state.h.matmul(&self.w_hh)?)?;
        let i = pre.narrow(1, 0, h)?.sigmoid();
        let f = pre.narrow(1, h, h)?.sigmoid();
        let g = pre.narrow(1, 2 * h, h)?.tanh();
        let o = pre.narrow(1, 3 * h, h)?.sigmoid();
        let c = f.mul(&state.c)?.add(&i.mul(&g)?)?;
        let h = o.mul(&c.tanh())?;
        Ok(LstmState { h, c })
    }

    /// Run over rows of `x` (`[n, in]`), right to left when `reverse`.
    /// Outputs are returned in input order, with the state after the last
    /// step taken.
    pub fn run(&self, x: &Tensor, reverse: bool, init: Option<LstmState>) -> Result<(Tensor, LstmState), crate::tensor::TensorError> {
        let n = x.shape()[0];
        let proj = self.project(x)?;
        let mut state = init.unwrap_or_else(|| LstmState::zeros(self.hidden()));
        let mut outs = vec![None; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            state = self.step(&proj.narrow(0, t, 1)?, &state)?;
            outs[t] = Some(state.h.clone());
        }
        let outs: Vec<Tensor> = outs.into_iter().map(|o| o.expect("every step ran")).collect();
        let refs: Vec<&Tensor> = outs.iter().collect();
        Ok((Tensor::concat(&refs, 0)?, state))
    }
}

/// Stacked bidirectional LSTM; each layer's output is `[forward; backward]`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub layers: Vec<(Lstm, Lstm)>,
}

impl BiLstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                (
                    Lstm::new(store, &format!("{name}.l{l}.fwd"), inp, hidden, rng),
                    Lstm::new(store, &format!("{name}.l{l}.bwd"), inp, hidden, rng),
                )
            })
            .collect();
        BiLstm { layers }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.layers[0].0.hidden()
    }

    pub fn forward(&self, x: &Tensor) -> TResult {
        let mut h = x.clone();
        for (fwd, bwd) in &self.layers {
            let (f, _) = fwd.run(&h, false, None)?;
            let (b, _) = bwd.run(&h, true, None)?;
            h = Tensor::concat(&[&f, &b], 1)?;
        }
        Ok(h)
    }
}
