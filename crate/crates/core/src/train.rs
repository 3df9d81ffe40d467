//! Corpus loading, the key=value training configuration and the training
//! loop.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::eval::{evaluate, EvalReport};
use crate::graph::{
    align_companion, attach_ner, read_companion, read_mrp_lines, read_ner_sidecar, AlignError, CompanionError, CompanionSentence,
    Framework, MrpError, MrpGraph,
};
use crate::model::{LossWeights, Model, ModelConfig, ModelError, ModelVocabs};
use crate::pipeline::{prepare, restore, Input, Instance, PipelineError, Resources};
use crate::synth::gen_synthetic;
use crate::tensor::Adam;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Mrp(#[from] MrpError),
    #[error(transparent)]
    Companion(#[from] CompanionError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("{mrp} graphs but {companion} companion sentences")]
    Pairing { mrp: usize, companion: usize },
    #[error("non-finite loss at step {step} on `{id}`: terms {parts:?} (node, edge, label, prop, anchor)")]
    NonFinite { step: usize, id: String, parts: [f64; 5] },
    #[error("no training instances")]
    Empty,
}

pub fn read_file(path: &Path) -> Result<String, TrainError> {
    fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Gold graphs paired with companion sentences (by id when the companion
/// names its sentences, else by position), aligned onto each graph's input
/// and tagged from an optional NER sidecar.
pub fn load_corpus(mrp: &Path, companion: &Path, ner: Option<&Path>) -> Result<Vec<(MrpGraph, CompanionSentence)>, TrainError> {
    let graphs = read_mrp_lines(&read_file(mrp)?)?;
    let mut sentences = read_companion(&read_file(companion)?)?;
    if let Some(ner) = ner {
        attach_ner(&mut sentences, &read_ner_sidecar(&read_file(ner)?))?;
    }
    let by_id: BTreeMap<&str, &CompanionSentence> = sentences.iter().filter_map(|s| Some((s.id.as_deref()?, s))).collect();
    let mut out = Vec::with_capacity(graphs.len());
    for (i, g) in graphs.iter().enumerate() {
        let c = match by_id.get(g.id.as_str()) {
            Some(c) => *c,
            None if by_id.is_empty() && sentences.len() == graphs.len() => &sentences[i],
            None => {
                return Err(TrainError::Pairing {
                    mrp: graphs.len(),
                    companion: sentences.len(),
                })
            }
        };
        let aligned = align_companion(g, c)?;
        out.push((g.clone(), aligned));
    }
    Ok(out)
}

/// Where training and dev data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Generate this many synthetic sentences instead of reading files.
    pub synthetic: Option<usize>,
    pub synthetic_seed: u64,
    /// Share of synthetic sentences held out for dev.
    pub dev_fraction: f64,
    pub train_mrp: Option<PathBuf>,
    pub train_companion: Option<PathBuf>,
    pub train_ner: Option<PathBuf>,
    pub dev_mrp: Option<PathBuf>,
    pub dev_companion: Option<PathBuf>,
    pub dev_ner: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: None,
            synthetic_seed: 1,
            dev_fraction: 0.2,
            train_mrp: None,
            train_companion: None,
            train_ner: None,
            dev_mrp: None,
            dev_companion: None,
            dev_ner: None,
        }
    }
}

/// Dev metric used for model selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Micro-average over all components.
    Micro,
    /// Labeled edge F1.
    Edges,
}

impl Metric {
    pub fn score(self, r: &EvalReport) -> f64 {
        match self {
            Metric::Micro => r.micro().f1(),
            Metric::Edges => r.labeled_f1(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub seed: u64,
    pub lr: f64,
    /// The learning rate halves every `anneal_steps` updates.
    pub anneal_steps: usize,
    pub max_steps: usize,
    /// Stop after this many steps without a dev improvement.
    pub patience: usize,
    pub eval_every: usize,
    /// Sentences are added to a batch until it holds this many tokens.
    pub batch_tokens: usize,
    pub clip: f64,
    pub metric: Metric,
    /// Stop as soon as the dev metric reaches this value.
    pub target: Option<f64>,
    pub out: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            data: DataConfig::default(),
            seed: 1,
            lr: 1e-3,
            anneal_steps: 500,
            max_steps: 2000,
            patience: 500,
            eval_every: 50,
            batch_tokens: 60,
            clip: 5.0,
            metric: Metric::Micro,
            target: None,
            out: None,
        }
    }

    /// Learning rate in effect at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        let halvings = step.checked_div(self.anneal_steps).unwrap_or(0);
        self.lr * 0.5f64.powi(halvings as i32)
    }

    /// Parse `key = value` lines over the defaults. Keys are dotted paths
    /// into the configuration (`model.encoder.hidden`); `framework` is short
    /// for `model.framework`. `#` starts a comment.
    pub fn parse(doc: &str) -> Result<Self, TrainError> {
        let mut framework = None;
        let mut pairs = Vec::new();
        for (i, raw) in doc.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| TrainError::Config {
                line: i + 1,
                message: format!("expected key = value, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            let k = if k == "framework" { "model.framework" } else { k };
            if k == "model.framework" {
                framework = Some(v.parse::<Framework>().map_err(|e| TrainError::Config {
                    line: i + 1,
                    message: e.to_string(),
                })?);
            }
            pairs.push((i + 1, k.to_string(), v.to_string()));
        }
        let framework = framework.ok_or_else(|| TrainError::Invalid("`framework` is required".into()))?;
        let mut tree = serde_json::to_value(TrainConfig::new(ModelConfig::new(framework))).expect("plain data");
        for (line, key, value) in pairs {
            set_path(&mut tree, &key, &value).map_err(|message| TrainError::Config { line, message })?;
        }
        let cfg: TrainConfig = serde_json::from_value(tree).map_err(|e| TrainError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let w = &self.model.weights;
        if [w.edge, w.label, w.prop, w.anchor].iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err(TrainError::Invalid("loss weights must be nonnegative".into()));
        }
        if self.eval_every == 0 || self.batch_tokens == 0 {
            return Err(TrainError::Invalid("eval_every and batch_tokens must be positive".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(TrainError::Invalid("lr must be positive".into()));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(tree: &mut Value, key: &str, raw: &str) -> Result<(), String> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| format!("`{key}` is not a configuration key"))?;
        let slot = obj.get_mut(*part).ok_or_else(|| format!("unknown key `{key}`"))?;
        if i + 1 == parts.len() {
            let value = match (&*slot, parse_value(raw)) {
                (Value::String(_), v) if !v.is_string() => Value::String(raw.to_string()),
                (_, v) => v,
            };
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Ok(())
}

/// Gold instances and the matching dev inputs with their gold graphs.
pub struct Dataset {
    pub resources: Resources,
    pub train: Vec<Instance>,
    pub dev: Vec<(Input, MrpGraph)>,
}

impl Dataset {
    /// Resources come from the training split only.
    pub fn build(
        framework: Framework,
        train: &[(MrpGraph, CompanionSentence)],
        dev: &[(MrpGraph, CompanionSentence)],
    ) -> Result<Self, TrainError> {
        let resources = Resources::build(framework, train);
        let train = train
            .iter()
            .map(|(g, c)| prepare(g, c, &resources))
            .collect::<Result<Vec<_>, _>>()?;
        let dev = dev
            .iter()
            .map(|(g, c)| {
                let input = crate::pipeline::prepare_input(&g.id, framework, &g.input, c, &resources);
                (input, g.clone())
            })
            .collect();
        Ok(Dataset { resources, train, dev })
    }

    pub fn from_config(cfg: &TrainConfig) -> Result<Self, TrainError> {
        let fw = cfg.model.framework;
        let d = &cfg.data;
        if let Some(n) = d.synthetic {
            let corpus = gen_synthetic(fw, n, d.synthetic_seed);
            let dev_n = ((n as f64) * d.dev_fraction).round() as usize;
            let (train, dev) = corpus.split_at(n - dev_n.min(n));
            return Dataset::build(fw, train, dev);
        }
        let need = |p: &Option<PathBuf>, k: &str| p.clone().ok_or_else(|| TrainError::Invalid(format!("`data.{k}` is required")));
        let train = load_corpus(
            &need(&d.train_mrp, "train_mrp")?,
            &need(&d.train_companion, "train_companion")?,
            d.train_ner.as_deref(),
        )?;
        let dev = match (&d.dev_mrp, &d.dev_companion) {
            (Some(m), Some(c)) => load_corpus(m, c, d.dev_ner.as_deref())?,
            _ => Vec::new(),
        };
        Dataset::build(fw, &train, &dev)
    }
}

/// Predict and restore one sentence; an unrestorable prediction becomes an
/// empty graph.
pub fn parse_graph(model: &Model, input: &Input) -> Result<MrpGraph, ModelError> {
    let target = model.predict(input)?;
    Ok(match restore(input, &target, &model.resources) {
        Ok(g) => g,
        Err(e) => {
            warn!("{}: prediction could not be restored: {e}", input.id);
            MrpGraph::new(input.id.clone(), input.framework, input.text.clone())
        }
    })
}

pub fn evaluate_dev(model: &Model, dev: &[(Input, MrpGraph)]) -> Result<EvalReport, TrainError> {
    let pred = dev.iter().map(|(i, _)| parse_graph(model, i)).collect::<Result<Vec<_>, _>>()?;
    let gold: Vec<MrpGraph> = dev.iter().map(|(_, g)| g.clone()).collect();
    Ok(evaluate(&gold, &pred).expect("paired by construction"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub step: usize,
    pub loss: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub steps: usize,
    pub best_step: usize,
    pub best_score: f64,
    pub history: Vec<Evaluation>,
    pub reached_target: bool,
}

fn batches(instances: &[Instance], order: &[usize], tokens: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let (mut cur, mut size) = (Vec::new(), 0);
    for &i in order {
        cur.push(i);
        size += instances[i].input.sentence.len();
        if size >= tokens {
            out.push(std::mem::take(&mut cur));
            size = 0;
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Train from scratch. The returned model holds the parameters with the best
/// dev score (the final ones when there is no dev data).
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<(Model, TrainReport), TrainError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::Empty);
    }
    let vocabs = ModelVocabs::build(cfg.model.framework, &data.train, cfg.model.label_min_freq);
    let model = Model::new(cfg.model.clone(), vocabs, data.resources.clone(), cfg.seed);
    info!(
        "{} parameters in {} tensors, {} training sentences, {} dev",
        model.store.num_values(),
        model.store.len(),
        data.train.len(),
        data.dev.len()
    );
    let mut opt = Adam::new(cfg.lr);
    opt.clip = Some(cfg.clip);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut queue: Vec<Vec<usize>> = Vec::new();
    let mut report = TrainReport {
        steps: 0,
        best_step: 0,
        best_score: f64::NEG_INFINITY,
        history: Vec::new(),
        reached_target: false,
    };
    let mut best: Option<Vec<u8>> = None;
    let mut window = 0.0;
    for step in 0..cfg.max_steps {
        if queue.is_empty() {
            order.shuffle(&mut rng);
            queue = batches(&data.train, &order, cfg.batch_tokens);
            queue.reverse();
        }
        let batch = queue.pop().expect("refilled above");
        model.store.zero_grad();
        let mut batch_loss = 0.0;
        for &i in &batch {
            let inst = &data.train[i];
            let parts = model.loss(inst)?;
            let total = parts.total(&cfg.model.weights).map_err(ModelError::from)?;
            if !total.item().is_finite() {
                return Err(TrainError::NonFinite {
                    step,
                    id: inst.input.id.clone(),
                    parts: parts.values(),
                });
            }
            batch_loss += total.item();
            total.backward().map_err(ModelError::from)?;
        }
        opt.lr = cfg.lr_at(step);
        opt.step(&model.store);
        window += batch_loss;
        report.steps = step + 1;
        if (step + 1) % cfg.eval_every != 0 && step + 1 != cfg.max_steps {
            continue;
        }
        let loss = window / cfg.eval_every as f64;
        window = 0.0;
        let score = if data.dev.is_empty() {
            -loss
        } else {
            cfg.metric.score(&evaluate_dev(&model, &data.dev)?)
        };
        info!("step {:>5}  lr {:.2e}  loss {loss:.4}  dev {score:.4}", step + 1, opt.lr);
        report.history.push(Evaluation {
            step: step + 1,
            loss,
            score,
        });
        if score > report.best_score {
            report.best_score = score;
            report.best_step = step + 1;
            let mut buf = Vec::new();
            model.store.save(&mut buf).map_err(ModelError::from)?;
            best = Some(buf);
        } else if step + 1 - report.best_step >= cfg.patience {
            info!("no improvement for {} steps, stopping", step + 1 - report.best_step);
            break;
        }
        if cfg.target.is_some_and(|t| score >= t) {
            report.reached_target = true;
            break;
        }
    }
    if let Some(buf) = best {
        model.store.load(&buf[..]).map_err(ModelError::from)?;
    }
    Ok((model, report))
}

/// Loss weights of the sweep grid: every combination of the edge, label
/// and property weights over `grid`, anchor weight 1.
pub fn sweep_weights(grid: &[f64]) -> Vec<LossWeights> {
    let mut out = Vec::new();
    for &edge in grid {
        for &label in grid {
            for &prop in grid {
                out.push(LossWeights {
                    edge,
                    label,
                    prop,
                    anchor: 1.0,
                });
            }
        }
    }
    out
}
