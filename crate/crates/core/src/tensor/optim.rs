use std::collections::BTreeMap;

use super::ParamStore;

/// Adam with optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: Option<f64>,
    steps: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(5.0),
            steps: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update from the accumulated gradients and return the
    /// pre-clipping global gradient norm. Parameters without a gradient are
    /// left untouched.
    pub fn step(&mut self, store: &ParamStore) -> f64 {
        let grads: Vec<(String, Vec<f64>)> = store.iter().filter_map(|(k, t)| t.grad().map(|g| (k.to_string(), g))).collect();
        let norm = grads.iter().flat_map(|(_, g)| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
        let factor = match self.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.steps += 1;
        let t = self.steps as i32;
        let (bc1, bc2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        for (name, g) in grads {
            let p = store.get(&name).expect("listed above");
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name).or_insert_with(|| vec![0.0; g.len()]);
            let mut data = p.data_mut();
            for i in 0..g.len() {
                let gi = g[i] * factor;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        norm
    }
}
