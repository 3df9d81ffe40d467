//! The full parser: encoder, node decoder, edge scorer and auxiliary heads,
//! with the weighted training loss, prediction and model directories.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{label_vocab, node_loss, DecoderConfig, PointerGenerator};
use crate::edge::{decode_graph, default_mask, edge_loss, label_loss, mfvi_logits, EdgeConfig, EdgePosterior, EdgeScorer};
use crate::graph::Framework;
use crate::heads::{anchor_loss, predict_anchors, predict_top_root, AnchorScorer, Classifier};
use crate::nn::vocab::UNK;
use crate::nn::{Encoder, EncoderConfig, EncoderOutput, NnError, Vocab, Vocabs};
use crate::pipeline::{Input, Instance, Item, PipelineError, Resources, Target};
use crate::prep::TokenSpan;
use crate::tensor::{no_grad, CheckpointError, Init, ParamStore, TResult, Tensor, TensorError};

/// Bilexical label class meaning "the token's lemma".
pub const LEMMA_CLASS: &str = "<lemma>";
/// Property class meaning "not set".
pub const NONE_CLASS: &str = "<none>";
const ANCHORED: &str = "yes";
const UNANCHORED: &str = "no";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("model directory: {0}")]
    Io(#[from] io::Error),
    #[error("model directory: {0}")]
    Format(String),
    #[error("instance `{id}` is {found}, model is {expected}")]
    Framework { id: String, expected: Framework, found: Framework },
}

/// Weights of the edge, label, property and anchor losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub edge: f64,
    pub label: f64,
    pub prop: f64,
    pub anchor: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            edge: 1.0,
            label: 1.0,
            prop: 1.0,
            anchor: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub framework: Framework,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub edge: EdgeConfig,
    pub classifier_hidden: usize,
    pub anchor_dim: usize,
    pub label_min_freq: usize,
    pub weights: LossWeights,
}

impl ModelConfig {
    pub fn new(framework: Framework) -> Self {
        ModelConfig {
            framework,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            edge: EdgeConfig::default(),
            classifier_hidden: 64,
            anchor_dim: 64,
            label_min_freq: 1,
            weights: LossWeights::default(),
        }
    }

    /// A small configuration for tests and quick experiments.
    pub fn tiny(framework: Framework) -> Self {
        ModelConfig {
            framework,
            encoder: EncoderConfig {
                word_dim: 16,
                pos_dim: 8,
                lemma_dim: 16,
                char_emb_dim: 8,
                char_dim: 8,
                ner_dim: 4,
                hidden: 32,
                layers: 1,
            },
            decoder: DecoderConfig { layers: 1, att_dim: 32 },
            edge: EdgeConfig {
                edge_dim: 32,
                label_dim: 32,
                second_dim: 16,
                iterations: 3,
                second_order: true,
            },
            classifier_hidden: 32,
            anchor_dim: 32,
            label_min_freq: 1,
            weights: LossWeights::default(),
        }
    }
}

/// Every vocabulary the model's shapes depend on.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelVocabs {
    pub tokens: Vocabs,
    /// Decoder labels, or bilexical label classes.
    pub node_labels: Vocab,
    pub edge_labels: Vocab,
    /// One class vocabulary per property name, in name order.
    pub properties: Vec<(String, Vocab)>,
    pub anchors: bool,
    /// Some items lack anchors, so anchoring itself is predicted.
    pub anchored: bool,
}

fn bilexical_class(item: &Item, lemma: &str) -> String {
    if item.label == lemma {
        LEMMA_CLASS.to_string()
    } else {
        item.label.clone()
    }
}

impl ModelVocabs {
    pub fn build(framework: Framework, instances: &[Instance], label_min_freq: usize) -> Self {
        let sentences: Vec<_> = instances.iter().map(|i| i.input.sentence.clone()).collect();
        let tokens = Vocabs::build(&sentences);
        let node_labels = if framework.is_bilexical() {
            let classes: Vec<String> = instances
                .iter()
                .flat_map(|i| {
                    i.target
                        .items
                        .iter()
                        .zip(&i.input.sentence.tokens)
                        .map(|(item, t)| bilexical_class(item, &t.lemma))
                })
                .collect();
            Vocab::build_with(classes.iter().map(String::as_str), label_min_freq, &[UNK, LEMMA_CLASS])
        } else {
            label_vocab(
                instances.iter().flat_map(|i| i.target.seq.iter().map(|(l, _)| l.as_str())),
                label_min_freq,
            )
        };
        let edge_labels = Vocab::build_with(
            instances.iter().flat_map(|i| i.target.edges.iter().map(|(_, _, l)| l.as_str())),
            1,
            &[UNK],
        );
        let mut values: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for i in instances {
            for item in &i.target.items {
                for (k, v) in &item.properties {
                    values.entry(k).or_default().push(v);
                }
            }
        }
        let properties = values
            .into_iter()
            .map(|(k, vs)| (k.to_string(), Vocab::build_with(vs, 1, &[NONE_CLASS])))
            .collect();
        let items = || instances.iter().flat_map(|i| i.target.items.iter());
        let anchors = !framework.is_bilexical() && items().any(|it| it.span.is_some());
        let anchored = anchors && items().any(|it| it.span.is_none());
        ModelVocabs {
            tokens,
            node_labels,
            edge_labels,
            properties,
            anchors,
            anchored,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let props: serde_json::Map<String, serde_json::Value> =
            self.properties.iter().map(|(k, v)| (k.clone(), v.to_lines().into())).collect();
        serde_json::json!({
            "tokens": self.tokens.to_files(),
            "node_labels": self.node_labels.to_lines(),
            "edge_labels": self.edge_labels.to_lines(),
            "properties": props,
            "anchors": self.anchors,
            "anchored": self.anchored,
        })
    }

    fn from_json(v: &serde_json::Value) -> Option<Self> {
        let lines = |x: &serde_json::Value| x.as_str().and_then(Vocab::from_lines);
        let tokens = v.get("tokens")?.as_object()?;
        Some(ModelVocabs {
            tokens: Vocabs::from_files(|k| tokens.get(k)?.as_str().map(String::from))?,
            node_labels: lines(v.get("node_labels")?)?,
            edge_labels: lines(v.get("edge_labels")?)?,
            properties: v
                .get("properties")?
                .as_object()?
                .iter()
                .map(|(k, x)| Some((k.clone(), lines(x)?)))
                .collect::<Option<_>>()?,
            anchors: v.get("anchors")?.as_bool()?,
            anchored: v.get("anchored")?.as_bool()?,
        })
    }
}

/// Unweighted loss terms of one instance.
#[derive(Clone, Debug)]
pub struct LossParts {
    /// Node generation (or bilexical label classification).
    pub node: Tensor,
    pub edge: Tensor,
    pub label: Tensor,
    pub prop: Tensor,
    pub anchor: Tensor,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> TResult {
        self.node
            .add(&self.edge.scale(w.edge))?
            .add(&self.label.scale(w.label))?
            .add(&self.prop.scale(w.prop))?
            .add(&self.anchor.scale(w.anchor))
    }

    pub fn values(&self) -> [f64; 5] {
        [
            self.node.item(),
            self.edge.item(),
            self.label.item(),
            self.prop.item(),
            self.anchor.item(),
        ]
    }
}

/// Pairs over `[ROOT; tokens]` that may carry an edge: off-diagonal and not
/// into the root.
pub fn root_mask(m: usize) -> Vec<bool> {
    (0..m * m).map(|x| x / m != x % m && x % m != 0).collect()
}

fn sum_all(parts: &[Tensor]) -> TResult {
    let mut acc = Tensor::scalar(0.0);
    for p in parts {
        acc = acc.add(p)?;
    }
    Ok(acc)
}

fn stack(rows: &[Tensor]) -> TResult {
    let refs: Vec<&Tensor> = rows.iter().collect();
    Tensor::concat(&refs, 0)
}

/// Item index of each decoder position, following copy chains.
fn position_items(seq: &[(String, usize)]) -> (Vec<usize>, Vec<usize>) {
    let mut item = vec![0; seq.len()];
    let mut originals = Vec::new();
    for (t, (_, idx)) in seq.iter().enumerate() {
        if *idx >= t {
            item[t] = originals.len();
            originals.push(t);
        } else {
            item[t] = item[*idx];
        }
    }
    (item, originals)
}

/// `(head, dependent, label)`.
type LabeledEdge = (usize, usize, String);

pub struct Model {
    pub cfg: ModelConfig,
    pub vocabs: ModelVocabs,
    pub resources: Resources,
    pub store: ParamStore,
    encoder: Encoder,
    decoder: Option<PointerGenerator>,
    root: Option<Tensor>,
    node_label: Option<Classifier>,
    edges: EdgeScorer,
    properties: Vec<(String, Classifier)>,
    anchors: Option<AnchorScorer>,
    anchored: Option<Classifier>,
}

impl Model {
    /// Build every parameter, in a fixed order, from `seed`.
    pub fn new(cfg: ModelConfig, vocabs: ModelVocabs, resources: Resources, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let width = 2 * cfg.encoder.hidden;
        let encoder = Encoder::new(&mut store, &cfg.encoder, &vocabs.tokens, &mut rng);
        let hidden = cfg.classifier_hidden;
        let (decoder, root, node_label) = if cfg.framework.is_bilexical() {
            let root = store.add("root", &[1, width], Init::Uniform(0.1), &mut rng);
            let clf = Classifier::new(&mut store, "node_label", width, hidden, vocabs.node_labels.clone(), &mut rng);
            (None, Some(root), Some(clf))
        } else {
            let dec = PointerGenerator::new(&mut store, &cfg.decoder, vocabs.node_labels.clone(), width, &mut rng);
            (Some(dec), None, None)
        };
        let edges = EdgeScorer::new(&mut store, "edge", width, vocabs.edge_labels.len(), &cfg.edge, &mut rng);
        let properties = vocabs
            .properties
            .iter()
            .map(|(k, v)| {
                let clf = Classifier::new(&mut store, &format!("prop.{k}"), width, hidden, v.clone(), &mut rng);
                (k.clone(), clf)
            })
            .collect();
        let anchors = vocabs
            .anchors
            .then(|| AnchorScorer::new(&mut store, "anchor", width, width, cfg.anchor_dim, &mut rng));
        let anchored = vocabs.anchored.then(|| {
            let v = Vocab::build_with([ANCHORED, UNANCHORED], 1, &[]);
            Classifier::new(&mut store, "anchored", width, hidden, v, &mut rng)
        });
        Model {
            cfg,
            vocabs,
            resources,
            store,
            encoder,
            decoder,
            root,
            node_label,
            edges,
            properties,
            anchors,
            anchored,
        }
    }

    fn check(&self, input: &Input) -> Result<(), ModelError> {
        if input.framework != self.cfg.framework {
            return Err(ModelError::Framework {
                id: input.id.clone(),
                expected: self.cfg.framework,
                found: input.framework,
            });
        }
        Ok(())
    }

    fn encode(&self, input: &Input) -> Result<EncoderOutput, ModelError> {
        Ok(self.encoder.encode(&input.sentence, &self.vocabs.tokens)?)
    }

    fn with_root(&self, r: &Tensor) -> TResult {
        Tensor::concat(&[self.root.as_ref().expect("bilexical model"), r], 0)
    }

    /// Property NLL over item rows `x`.
    fn property_loss(&self, x: &Tensor, items: &[Item]) -> TResult {
        let mut terms = Vec::new();
        for (name, clf) in &self.properties {
            let gold: Vec<(usize, &str)> = items
                .iter()
                .enumerate()
                .map(|(i, it)| {
                    let v = it.properties.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str());
                    (i, v.unwrap_or(NONE_CLASS))
                })
                .collect();
            terms.push(clf.loss(x, &gold)?);
        }
        sum_all(&terms)
    }

    /// Unweighted loss terms for one gold instance.
    pub fn loss(&self, inst: &Instance) -> Result<LossParts, ModelError> {
        self.check(&inst.input)?;
        let enc = self.encode(&inst.input)?;
        if self.cfg.framework.is_bilexical() {
            self.bilexical_loss(inst, &enc)
        } else {
            self.sequence_loss(inst, &enc)
        }
    }

    fn bilexical_loss(&self, inst: &Instance, enc: &EncoderOutput) -> Result<LossParts, ModelError> {
        let (n, target) = (enc.len(), &inst.target);
        let m = n + 1;
        let h = self.with_root(&enc.r)?;
        let parts = self.edges.score(&h)?;
        let mask = root_mask(m);
        let out = mfvi_logits(&parts, self.cfg.edge.iterations, &mask)?;
        let mut gold = vec![false; m * m];
        for &(a, b, _) in &target.edges {
            gold[(a + 1) * m + b + 1] = true;
        }
        for &t in &target.tops {
            gold[t + 1] = true;
        }
        let edge = edge_loss(&out.logits, &gold, &mask)?;
        let labels: Vec<(usize, usize, usize)> = target
            .edges
            .iter()
            .map(|(a, b, l)| (a + 1, b + 1, self.vocabs.edge_labels.index(l)))
            .collect();
        let label = label_loss(&parts.label, &labels)?;
        let classes: Vec<String> = target
            .items
            .iter()
            .zip(&inst.input.sentence.tokens)
            .map(|(item, t)| bilexical_class(item, &t.lemma))
            .collect();
        let gold_classes: Vec<(usize, &str)> = classes.iter().map(String::as_str).enumerate().collect();
        let node = self.node_label.as_ref().expect("bilexical model").loss(&enc.r, &gold_classes)?;
        let prop = self.property_loss(&enc.r, &target.items)?;
        Ok(LossParts {
            node,
            edge,
            label,
            prop,
            anchor: Tensor::scalar(0.0),
        })
    }

    fn sequence_loss(&self, inst: &Instance, enc: &EncoderOutput) -> Result<LossParts, ModelError> {
        let target = &inst.target;
        let dec = self.decoder.as_ref().expect("sequence model");
        let forced = dec.decode_forced(enc, &inst.input.lemmas(), &target.seq)?;
        let node = node_loss(&forced)?;
        let (_, originals) = position_items(&target.seq);
        let zero = || Tensor::scalar(0.0);
        if originals.is_empty() {
            return Ok(LossParts {
                node,
                edge: zero(),
                label: zero(),
                prop: zero(),
                anchor: zero(),
            });
        }
        let z = stack(&originals.iter().map(|&t| forced.z_tilde[t].clone()).collect::<Vec<_>>())?;
        let m = originals.len();
        let parts = self.edges.score(&z)?;
        let mask = default_mask(m);
        let out = mfvi_logits(&parts, self.cfg.edge.iterations, &mask)?;
        let mut gold = vec![false; m * m];
        for &(a, b, _) in &target.edges {
            gold[a * m + b] = true;
        }
        let edge = edge_loss(&out.logits, &gold, &mask)?;
        let labels: Vec<(usize, usize, usize)> = target
            .edges
            .iter()
            .map(|(a, b, l)| (*a, *b, self.vocabs.edge_labels.index(l)))
            .collect();
        let label = label_loss(&parts.label, &labels)?;
        let prop = self.property_loss(&z, &target.items)?;
        let mut anchor_terms = Vec::new();
        if let Some(scorer) = &self.anchors {
            let spans: Vec<Option<TokenSpan>> = target.items.iter().map(|it| it.span).collect();
            anchor_terms.push(anchor_loss(&scorer.score(&z, &enc.r)?, &spans)?);
        }
        if let Some(clf) = &self.anchored {
            let gold: Vec<(usize, &str)> = target
                .items
                .iter()
                .enumerate()
                .map(|(i, it)| (i, if it.span.is_some() { ANCHORED } else { UNANCHORED }))
                .collect();
            anchor_terms.push(clf.loss(&z, &gold)?);
        }
        Ok(LossParts {
            node,
            edge,
            label,
            prop,
            anchor: sum_all(&anchor_terms)?,
        })
    }

    fn predict_properties(&self, x: &Tensor, items: &mut [Item]) -> Result<(), ModelError> {
        for (name, clf) in &self.properties {
            for (item, value) in items.iter_mut().zip(clf.predict(x)?) {
                if value != NONE_CLASS && value != UNK {
                    item.properties.push((name.clone(), value));
                }
            }
        }
        Ok(())
    }

    fn decode_edges(&self, h: &Tensor, mask: &[bool]) -> Result<(EdgePosterior, Vec<LabeledEdge>), ModelError> {
        let parts = self.edges.score(h)?;
        let out = mfvi_logits(&parts, self.cfg.edge.iterations, mask)?;
        let q = EdgePosterior {
            n: parts.len(),
            q: out.q.to_vec(),
            iterations: self.cfg.edge.iterations,
        };
        let edges = decode_graph(&q, &parts.label.to_vec(), self.vocabs.edge_labels.len())
            .into_iter()
            .map(|e| (e.head, e.dep, self.vocabs.edge_labels.token(e.label).to_string()))
            .collect();
        Ok((q, edges))
    }

    /// Predicted structure in model space.
    pub fn predict(&self, input: &Input) -> Result<Target, ModelError> {
        self.check(input)?;
        no_grad(|| {
            let enc = self.encode(input)?;
            if self.cfg.framework.is_bilexical() {
                self.predict_bilexical(input, &enc)
            } else {
                self.predict_sequence(input, &enc)
            }
        })
    }

    fn predict_bilexical(&self, input: &Input, enc: &EncoderOutput) -> Result<Target, ModelError> {
        let m = enc.len() + 1;
        let (q, decoded) = self.decode_edges(&self.with_root(&enc.r)?, &root_mask(m))?;
        let classes = self.node_label.as_ref().expect("bilexical model").predict(&enc.r)?;
        let mut items: Vec<Item> = input
            .sentence
            .tokens
            .iter()
            .zip(classes)
            .enumerate()
            .map(|(i, (t, c))| Item {
                label: if c == LEMMA_CLASS || c == UNK { t.lemma.clone() } else { c },
                properties: Vec::new(),
                span: Some(TokenSpan::new(i, i)),
            })
            .collect();
        self.predict_properties(&enc.r, &mut items)?;
        let edges = decoded
            .into_iter()
            .filter(|(a, _, _)| *a != 0)
            .map(|(a, b, l)| (a - 1, b - 1, l))
            .collect();
        let tops = predict_top_root(&q, 0).map(|t| t - 1).into_iter().collect();
        Ok(Target {
            seq: Vec::new(),
            items,
            edges,
            tops,
        })
    }

    fn predict_sequence(&self, input: &Input, enc: &EncoderOutput) -> Result<Target, ModelError> {
        let dec = self.decoder.as_ref().expect("sequence model");
        let decoded = dec.decode_greedy(enc, &input.lemmas())?;
        let seq: Vec<(String, usize)> = decoded.labels.iter().cloned().zip(decoded.idx.iter().copied()).collect();
        let (_, originals) = position_items(&seq);
        if originals.is_empty() {
            return Ok(Target { seq, ..Target::default() });
        }
        let z = stack(&originals.iter().map(|&t| decoded.z_tilde[t].clone()).collect::<Vec<_>>())?;
        let mut items: Vec<Item> = originals
            .iter()
            .map(|&t| Item {
                label: seq[t].0.clone(),
                ..Item::default()
            })
            .collect();
        self.predict_properties(&z, &mut items)?;
        if let Some(scorer) = &self.anchors {
            let scores = scorer.score(&z, &enc.r)?;
            let spans = predict_anchors(&scores.start.to_vec(), &scores.end.to_vec(), enc.len());
            let anchored = match &self.anchored {
                Some(clf) => clf.predict(&z)?.into_iter().map(|c| c == ANCHORED).collect(),
                None => vec![true; items.len()],
            };
            for ((item, span), keep) in items.iter_mut().zip(spans).zip(anchored) {
                if keep {
                    item.span = Some(span);
                }
            }
        }
        let (_, edges) = self.decode_edges(&z, &default_mask(originals.len()))?;
        Ok(Target {
            seq,
            items,
            edges,
            tops: vec![0],
        })
    }

    /// Write `config.json`, `vocabs.json`, the resource tables and
    /// `params.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir)?;
        let cfg = serde_json::to_string_pretty(&self.cfg).map_err(|e| ModelError::Format(e.to_string()))?;
        fs::write(dir.join("config.json"), cfg)?;
        fs::write(dir.join("vocabs.json"), self.vocabs.to_json().to_string())?;
        for (name, doc) in self.resources.to_files() {
            fs::write(dir.join(format!("{name}.txt")), doc)?;
        }
        self.save_params(&dir.join("params.bin"))
    }

    pub fn save_params(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        self.store.save(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let bad = |what: &str| ModelError::Format(format!("{} has a malformed {what}", dir.display()));
        let cfg: ModelConfig =
            serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?).map_err(|e| ModelError::Format(e.to_string()))?;
        let vocabs: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("vocabs.json"))?).map_err(|e| ModelError::Format(e.to_string()))?;
        let vocabs = ModelVocabs::from_json(&vocabs).ok_or_else(|| bad("vocabs.json"))?;
        let resources =
            Resources::from_files(|k| fs::read_to_string(dir.join(format!("{k}.txt"))).ok()).ok_or_else(|| bad("resource table"))?;
        let model = Model::new(cfg, vocabs, resources, 0);
        model.store.load(&fs::read(dir.join("params.bin"))?[..])?;
        Ok(model)
    }
}
