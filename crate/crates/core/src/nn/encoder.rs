//! Word representations and the BiLSTM sentence encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::layers::{BiLstm, Embedding, Lstm};
use super::{NnError, Vocab};
use crate::graph::CompanionSentence;
use crate::tensor::{ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub lemma_dim: usize,
    pub char_emb_dim: usize,
    /// Width of the character LSTM state used as the character feature.
    pub char_dim: usize,
    pub ner_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 64,
            pos_dim: 16,
            lemma_dim: 32,
            char_emb_dim: 16,
            char_dim: 32,
            ner_dim: 16,
            hidden: 128,
            layers: 2,
        }
    }
}

impl EncoderConfig {
    pub fn input_dim(&self) -> usize {
        self.word_dim + self.pos_dim + self.lemma_dim + self.char_dim + self.ner_dim
    }
}

/// Token-level vocabularies built from training sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabs {
    pub words: Vocab,
    pub pos: Vocab,
    pub lemmas: Vocab,
    pub ner: Vocab,
    pub chars: Vocab,
}

impl Vocabs {
    pub fn build(sentences: &[CompanionSentence]) -> Self {
        let toks = || sentences.iter().flat_map(|s| s.tokens.iter());
        let chars: Vec<String> = toks().flat_map(|t| t.form.chars()).map(String::from).collect();
        Vocabs {
            words: Vocab::build(toks().map(|t| t.form.as_str()), 1),
            pos: Vocab::build(toks().map(|t| t.xpos.as_str()), 1),
            lemmas: Vocab::build(toks().map(|t| t.lemma.as_str()), 1),
            ner: Vocab::build(sentences.iter().flat_map(|s| s.ner_tags.iter().map(String::as_str)), 1),
            chars: Vocab::build(chars.iter().map(String::as_str), 1),
        }
    }

    /// Files keyed by name, each in the `entry \t frequency` format.
    pub fn to_files(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("words", self.words.to_lines()),
            ("pos", self.pos.to_lines()),
            ("lemmas", self.lemmas.to_lines()),
            ("ner", self.ner.to_lines()),
            ("chars", self.chars.to_lines()),
        ])
    }

    pub fn from_files(get: impl Fn(&str) -> Option<String>) -> Option<Self> {
        let load = |k: &str| get(k).and_then(|doc| Vocab::from_lines(&doc));
        Some(Vocabs {
            words: load("words")?,
            pos: load("pos")?,
            lemmas: load("lemmas")?,
            ner: load("ner")?,
            chars: load("chars")?,
        })
    }
}

/// Encoder output `R`, one `2h`-wide row per token.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub r: Tensor,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.r.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.r.shape()[1]
    }

    /// `r_n`, the state that initialises the decoder.
    pub fn last(&self) -> Result<Tensor, NnError> {
        Ok(self.r.narrow(0, self.len() - 1, 1)?)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub word: Embedding,
    pub pos: Embedding,
    pub lemma: Embedding,
    pub ner: Embedding,
    pub chars: Embedding,
    pub char_lstm: Lstm,
    pub bilstm: BiLstm,
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, vocabs: &Vocabs, rng: &mut R) -> Self {
        Encoder {
            word: Embedding::new(store, "enc.word", vocabs.words.len(), cfg.word_dim, rng),
            pos: Embedding::new(store, "enc.pos", vocabs.pos.len(), cfg.pos_dim, rng),
            lemma: Embedding::new(store, "enc.lemma", vocabs.lemmas.len(), cfg.lemma_dim, rng),
            ner: Embedding::new(store, "enc.ner", vocabs.ner.len(), cfg.ner_dim, rng),
            chars: Embedding::new(store, "enc.chars", vocabs.chars.len(), cfg.char_emb_dim, rng),
            char_lstm: Lstm::new(store, "enc.char_lstm", cfg.char_emb_dim, cfg.char_dim, rng),
            bilstm: BiLstm::new(store, "enc.bilstm", cfg.input_dim(), cfg.hidden, cfg.layers, rng),
        }
    }

    /// Final character-LSTM state for each distinct form, stacked per token.
    fn char_features(&self, c: &CompanionSentence, vocabs: &Vocabs) -> Result<Tensor, NnError> {
        let mut cache: BTreeMap<&str, Tensor> = BTreeMap::new();
        let mut rows = Vec::with_capacity(c.len());
        for t in &c.tokens {
            if !cache.contains_key(t.form.as_str()) {
                let mut ids: Vec<usize> = t.form.chars().map(|ch| vocabs.chars.index(&ch.to_string())).collect();
                if ids.is_empty() {
                    ids.push(vocabs.chars.index(super::vocab::PAD));
                }
                let (_, state) = self.char_lstm.run(&self.chars.forward(&ids)?, false, None)?;
                cache.insert(&t.form, state.h);
            }
            rows.push(cache[t.form.as_str()].clone());
        }
        let refs: Vec<&Tensor> = rows.iter().collect();
        Ok(Tensor::concat(&refs, 0)?)
    }

    /// `O = [o_w; o_pos; o_lemma; o_char; o_ne]`, `[n, input_dim]`.
    pub fn embed(&self, c: &CompanionSentence, vocabs: &Vocabs) -> Result<Tensor, NnError> {
        if c.is_empty() {
            return Err(NnError::EmptySentence);
        }
        let ids = |v: &Vocab, key: fn(&crate::graph::CompanionToken) -> &str| -> Vec<usize> {
            c.tokens.iter().map(|t| v.index(key(t))).collect()
        };
        let w = self.word.forward(&ids(&vocabs.words, |t| &t.form))?;
        let p = self.pos.forward(&ids(&vocabs.pos, |t| &t.xpos))?;
        let l = self.lemma.forward(&ids(&vocabs.lemmas, |t| &t.lemma))?;
        let ch = self.char_features(c, vocabs)?;
        let ner_ids: Vec<usize> = (0..c.len())
            .map(|i| vocabs.ner.index(c.ner_tags.get(i).map(String::as_str).unwrap_or("O")))
            .collect();
        let ne = self.ner.forward(&ner_ids)?;
        Ok(Tensor::concat(&[&w, &p, &l, &ch, &ne], 1)?)
    }

    pub fn encode(&self, c: &CompanionSentence, vocabs: &Vocabs) -> Result<EncoderOutput, NnError> {
        let o = self.embed(c, vocabs)?;
        Ok(EncoderOutput {
            r: self.bilstm.forward(&o)?,
        })
    }
}
