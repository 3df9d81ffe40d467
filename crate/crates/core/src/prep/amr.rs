//! AMR sense stripping, entity anonymisation and their inverse.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{CompanionSentence, CompanionToken, Framework, MrpEdge, MrpGraph, MrpNode};

/// Strip a trailing `-NN` sense suffix.
pub fn strip_sense(label: &str) -> &str {
    match label.rsplit_once('-') {
        Some((stem, sense)) if !stem.is_empty() && !sense.is_empty() && sense.bytes().all(|b| b.is_ascii_digit()) => stem,
        _ => label,
    }
}

fn bare_tag(tag: &str) -> &str {
    tag.strip_prefix("B-").or_else(|| tag.strip_prefix("I-")).unwrap_or(tag)
}

fn placeholder_type(concept: &str) -> String {
    concept.to_uppercase().replace('-', "_")
}

/// Whether a label has the shape of an anonymised placeholder (`PERSON_0`).
pub fn is_placeholder(label: &str) -> bool {
    match label.rsplit_once('_') {
        Some((ty, k)) => {
            !ty.is_empty()
                && !k.is_empty()
                && k.bytes().all(|b| b.is_ascii_digit())
                && ty.chars().all(|c| c.is_ascii_uppercase() || c == '_')
        }
        None => false,
    }
}

/// A node hanging off an anonymised entity root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityChild {
    pub edge: String,
    pub label: String,
    pub properties: Vec<(String, String)>,
}

/// The sub-graph and surface phrase behind one placeholder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub placeholder: String,
    pub concept: String,
    pub properties: Vec<(String, String)>,
    pub children: Vec<EntityChild>,
    pub phrase: Vec<String>,
    /// NER tag seen on the phrase, if any.
    pub ner: Option<String>,
}

/// Per-sentence placeholder mapping.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymizationEntry {
    pub records: Vec<EntityRecord>,
}

impl AnonymizationEntry {
    pub fn get(&self, placeholder: &str) -> Option<&EntityRecord> {
        self.records.iter().find(|r| r.placeholder == placeholder)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain data")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// NER tag to entity concept counts, used to anonymise unseen sentences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnonymizationTable {
    counts: BTreeMap<String, BTreeMap<String, usize>>,
}

impl AnonymizationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, entry: &AnonymizationEntry) {
        for r in &entry.records {
            if let Some(tag) = &r.ner {
                *self.counts.entry(tag.clone()).or_default().entry(r.concept.clone()).or_default() += 1;
            }
        }
    }

    /// Most frequent concept for a tag; ties go to the smaller string.
    pub fn concept_for(&self, tag: &str) -> Option<&str> {
        let by_concept = self.counts.get(bare_tag(tag))?;
        by_concept
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(c, _)| c.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `tag \t concept \t count` lines.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for (tag, m) in &self.counts {
            for (concept, n) in m {
                out.push_str(&format!("{tag}\t{concept}\t{n}\n"));
            }
        }
        out
    }

    pub fn from_lines(doc: &str) -> Option<Self> {
        let mut t = Self::new();
        for line in doc.lines().filter(|l| !l.trim().is_empty()) {
            let mut cols = line.split('\t');
            let (tag, concept, n) = (cols.next()?, cols.next()?, cols.next()?.parse().ok()?);
            t.counts.entry(tag.to_string()).or_default().insert(concept.to_string(), n);
        }
        Some(t)
    }
}

/// Sense and polarity frequencies keyed on the sense-stripped label.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SenseTable {
    senses: BTreeMap<String, BTreeMap<String, usize>>,
    polarity: BTreeMap<String, (usize, usize)>,
}

impl SenseTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Count the full labels and polarity attachments of an original graph.
    pub fn observe(&mut self, g: &MrpGraph) {
        for n in &g.nodes {
            let Some(label) = &n.label else { continue };
            let stem = strip_sense(label).to_string();
            *self.senses.entry(stem.clone()).or_default().entry(label.clone()).or_default() += 1;
            let slot = self.polarity.entry(stem).or_default();
            slot.1 += 1;
            if n.property("polarity").is_some() {
                slot.0 += 1;
            }
        }
    }

    pub fn add(&mut self, full: &str, count: usize) {
        *self
            .senses
            .entry(strip_sense(full).to_string())
            .or_default()
            .entry(full.to_string())
            .or_default() += count;
    }

    /// Most frequent full label for a stem; unseen stems get `-01`.
    pub fn restore(&self, stem: &str) -> String {
        match self.senses.get(stem) {
            Some(m) => m
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(l, _)| l.clone())
                .unwrap_or_else(|| format!("{stem}-01")),
            None => format!("{stem}-01"),
        }
    }

    /// Whether the stem carried `polarity -` on more than half of its occurrences.
    pub fn negated(&self, stem: &str) -> bool {
        match self.polarity.get(stem) {
            Some(&(neg, total)) if total > 0 => neg as f64 / total as f64 > 0.5,
            _ => false,
        }
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for m in self.senses.values() {
            for (full, n) in m {
                out.push_str(&format!("sense\t{full}\t{n}\n"));
            }
        }
        for (stem, (neg, total)) in &self.polarity {
            out.push_str(&format!("polarity\t{stem}\t{neg}\t{total}\n"));
        }
        out
    }

    pub fn from_lines(doc: &str) -> Option<Self> {
        let mut t = Self::new();
        for line in doc.lines().filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            match cols[..] {
                ["sense", full, n] => t.add(full, n.parse().ok()?),
                ["polarity", stem, neg, total] => {
                    t.polarity.insert(stem.to_string(), (neg.parse().ok()?, total.parse().ok()?));
                }
                _ => return None,
            }
        }
        Some(t)
    }
}

/// Result of [`amr_preprocess`].
#[derive(Clone, Debug, PartialEq)]
pub struct AmrPrep {
    pub graph: MrpGraph,
    pub sentence: CompanionSentence,
    pub entry: AnonymizationEntry,
    /// Ids of nodes that carried `polarity -`.
    pub negated: Vec<u32>,
}

struct Candidate {
    root: u32,
    internal: Vec<u32>,
    phrase_tokens: (usize, usize),
}

fn find_run(c: &CompanionSentence, words: &[String], taken: &[bool]) -> Option<usize> {
    if words.is_empty() || words.len() > c.len() {
        return None;
    }
    (0..=c.len() - words.len()).find(|&s| (0..words.len()).all(|k| !taken[s + k] && c.tokens[s + k].form.eq_ignore_ascii_case(&words[k])))
}

/// Children reachable only through the root, with no edges of their own.
fn leaf_children(g: &MrpGraph, root: u32, pred: impl Fn(&MrpEdge, &MrpNode) -> bool) -> Vec<u32> {
    g.edges
        .iter()
        .filter(|e| e.source == root)
        .filter(|e| {
            let child = g.node(e.target).expect("validated");
            g.degree(e.target) == 1 && !g.tops.contains(&e.target) && pred(e, child)
        })
        .map(|e| e.target)
        .collect()
}

fn entity_candidates(g: &MrpGraph, c: &CompanionSentence) -> Vec<Candidate> {
    let mut taken = vec![false; c.len()];
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for n in &g.nodes {
        if used.contains(&n.id) {
            continue;
        }
        let label = n.label_str();
        let found = if let Some(&name) = leaf_children(g, n.id, |e, ch| e.label == "name" && ch.label_str() == "name").first() {
            let node = g.node(name).expect("exists");
            let words: Vec<String> = node
                .properties
                .iter()
                .filter(|(k, _)| k.starts_with("op"))
                .map(|(_, v)| v.clone())
                .collect();
            find_run(c, &words, &taken).map(|s| (vec![name], (s, s + words.len() - 1)))
        } else if label == "date-entity" && g.edges.iter().all(|e| e.source != n.id) {
            let values: Vec<&str> = n.properties.iter().map(|(_, v)| v.as_str()).collect();
            let hits: Vec<usize> = (0..c.len())
                .filter(|&i| !taken[i] && values.iter().any(|v| c.tokens[i].form.eq_ignore_ascii_case(v)))
                .collect();
            match (hits.first(), hits.last()) {
                (Some(&s), Some(&e)) if !values.is_empty() && (s..=e).all(|i| !taken[i]) => Some((Vec::new(), (s, e))),
                _ => None,
            }
        } else if label.ends_with("-quantity") {
            n.property("quant").and_then(|q| {
                let s = (0..c.len()).find(|&i| !taken[i] && c.tokens[i].form == q)?;
                let units = leaf_children(g, n.id, |e, _| e.label == "unit");
                let mut end = s;
                if let Some(&u) = units.first() {
                    let unit = g.node(u).expect("exists").label_str();
                    if s + 1 < c.len()
                        && !taken[s + 1]
                        && (c.tokens[s + 1].lemma.eq_ignore_ascii_case(unit) || c.tokens[s + 1].form.eq_ignore_ascii_case(unit))
                    {
                        end = s + 1;
                    }
                }
                Some((units, (s, end)))
            })
        } else {
            None
        };
        if let Some((internal, (s, e))) = found {
            taken[s..=e].iter_mut().for_each(|t| *t = true);
            used.insert(n.id);
            used.extend(internal.iter().copied());
            out.push(Candidate {
                root: n.id,
                internal,
                phrase_tokens: (s, e),
            });
        }
    }
    out.sort_by_key(|cand| cand.phrase_tokens.0);
    out
}

fn majority_tag(tags: &[String]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tags {
        let b = bare_tag(t);
        if b != "O" && !b.is_empty() {
            *counts.entry(b).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(t, _)| t.to_string())
}

/// Replace token runs by single placeholder tokens.
fn collapse_tokens(c: &CompanionSentence, runs: &[((usize, usize), String)]) -> CompanionSentence {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut i = 0;
    let mut runs = runs.iter().peekable();
    while i < c.len() {
        if let Some(((s, e), ph)) = runs.peek().filter(|((s, _), _)| *s == i) {
            let first = &c.tokens[*s];
            tokens.push(CompanionToken {
                form: ph.clone(),
                lemma: ph.clone(),
                xpos: first.xpos.clone(),
                start: first.start,
                end: c.tokens[*e].end,
            });
            tags.push(c.ner_tags.get(*s).cloned().unwrap_or_else(|| "O".into()));
            i = e + 1;
            runs.next();
        } else {
            tokens.push(c.tokens[i].clone());
            tags.push(c.ner_tags.get(i).cloned().unwrap_or_else(|| "O".into()));
            i += 1;
        }
    }
    CompanionSentence {
        id: c.id.clone(),
        tokens,
        ner_tags: tags,
    }
}

fn next_placeholder(counters: &mut BTreeMap<String, usize>, concept: &str) -> String {
    let ty = placeholder_type(concept);
    let k = counters.entry(ty.clone()).or_default();
    let ph = format!("{ty}_{k}");
    *k += 1;
    ph
}

/// Strip senses, drop wiki and polarity, and anonymise entity sub-graphs
/// whose phrase is found in the sentence.
pub fn amr_preprocess(g: &MrpGraph, c: &CompanionSentence) -> AmrPrep {
    debug_assert_eq!(g.framework, Framework::Amr);
    let mut graph = g.clone();
    let mut negated = Vec::new();
    for n in &mut graph.nodes {
        if n.property("polarity").is_some() {
            negated.push(n.id);
        }
        n.properties.retain(|(k, _)| k != "wiki" && k != "polarity");
    }

    let cands = entity_candidates(&graph, c);
    let mut counters = BTreeMap::new();
    let mut records = Vec::new();
    let mut runs = Vec::new();
    for cand in &cands {
        let root = graph.node(cand.root).expect("exists").clone();
        let concept = root.label_str().to_string();
        let placeholder = next_placeholder(&mut counters, &concept);
        let children = cand
            .internal
            .iter()
            .map(|&id| {
                let e = graph
                    .edges
                    .iter()
                    .find(|e| e.source == cand.root && e.target == id)
                    .expect("leaf edge");
                let ch = graph.node(id).expect("exists");
                EntityChild {
                    edge: e.label.clone(),
                    label: ch.label_str().to_string(),
                    properties: ch.properties.clone(),
                }
            })
            .collect();
        let (s, e) = cand.phrase_tokens;
        records.push(EntityRecord {
            placeholder: placeholder.clone(),
            concept,
            properties: root.properties.clone(),
            children,
            phrase: c.tokens[s..=e].iter().map(|t| t.form.clone()).collect(),
            ner: majority_tag(c.ner_tags.get(s..=e).unwrap_or(&[])),
        });
        runs.push(((s, e), placeholder.clone()));
        for &id in &cand.internal {
            graph.remove_node(id);
        }
        let node = graph.node_mut(cand.root).expect("exists");
        node.label = Some(placeholder);
        node.properties.clear();
    }

    for n in &mut graph.nodes {
        if let Some(label) = &n.label {
            if !is_placeholder(label) {
                n.label = Some(strip_sense(label).to_string());
            }
        }
    }

    AmrPrep {
        graph,
        sentence: collapse_tokens(c, &runs),
        entry: AnonymizationEntry { records },
        negated,
    }
}

/// Test-time anonymisation driven by NER tags and the training table.
pub fn anonymize_sentence(c: &CompanionSentence, table: &AnonymizationTable) -> (CompanionSentence, AnonymizationEntry) {
    let mut counters = BTreeMap::new();
    let mut records = Vec::new();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < c.len() {
        let tag = c.ner_tags.get(i).map(String::as_str).unwrap_or("O");
        let bare = bare_tag(tag);
        let Some(concept) = (bare != "O").then(|| table.concept_for(bare)).flatten() else {
            i += 1;
            continue;
        };
        let mut e = i;
        while e + 1 < c.len() {
            let next = c.ner_tags.get(e + 1).map(String::as_str).unwrap_or("O");
            if bare_tag(next) != bare || next.starts_with("B-") {
                break;
            }
            e += 1;
        }
        let phrase: Vec<String> = c.tokens[i..=e].iter().map(|t| t.form.clone()).collect();
        let placeholder = next_placeholder(&mut counters, concept);
        let (properties, children) = entity_template(concept, &phrase);
        records.push(EntityRecord {
            placeholder: placeholder.clone(),
            concept: concept.to_string(),
            properties,
            children,
            phrase,
            ner: Some(bare.to_string()),
        });
        runs.push(((i, e), placeholder));
        i = e + 1;
    }
    (collapse_tokens(c, &runs), AnonymizationEntry { records })
}

fn entity_template(concept: &str, phrase: &[String]) -> (Vec<(String, String)>, Vec<EntityChild>) {
    if concept == "date-entity" {
        let props = phrase
            .iter()
            .filter(|w| w.len() == 4 && w.bytes().all(|b| b.is_ascii_digit()))
            .map(|w| ("year".to_string(), w.clone()))
            .collect();
        (props, Vec::new())
    } else if concept.ends_with("-quantity") {
        (vec![("quant".to_string(), phrase[0].clone())], Vec::new())
    } else {
        let props = phrase
            .iter()
            .enumerate()
            .map(|(k, w)| (format!("op{}", k + 1), w.clone()))
            .collect();
        let name = EntityChild {
            edge: "name".into(),
            label: "name".into(),
            properties: props,
        };
        (Vec::new(), vec![name])
    }
}

/// Expand placeholders, restore senses and polarity.
pub fn amr_postprocess(g: &MrpGraph, entry: &AnonymizationEntry, senses: &SenseTable) -> MrpGraph {
    let mut out = g.clone();
    let mut next = out.next_node_id();
    let mut expanded = BTreeSet::new();
    let ids: Vec<u32> = out.nodes.iter().map(|n| n.id).collect();
    for id in ids {
        let label = out.node(id).expect("exists").label_str().to_string();
        if !is_placeholder(&label) {
            continue;
        }
        let Some(rec) = entry.get(&label) else {
            log::warn!("graph {}: placeholder {label} has no recorded entity", out.id);
            expanded.insert(id);
            continue;
        };
        let node = out.node_mut(id).expect("exists");
        node.label = Some(rec.concept.clone());
        node.properties = rec.properties.clone();
        expanded.insert(id);
        for ch in &rec.children {
            let mut child = MrpNode::new(next, ch.label.clone());
            child.properties = ch.properties.clone();
            out.nodes.push(child);
            out.edges.push(MrpEdge::new(id, next, ch.edge.clone()));
            expanded.insert(next);
            next += 1;
        }
    }
    for n in &mut out.nodes {
        if expanded.contains(&n.id) {
            continue;
        }
        let Some(stem) = n.label.clone() else { continue };
        if needs_sense_lookup(&stem) {
            n.label = Some(senses.restore(&stem));
        }
        if senses.negated(&stem) && n.property("polarity").is_none() {
            n.properties.push(("polarity".into(), "-".into()));
        }
    }
    out
}

/// Concept-like labels only: lowercase words with hyphens, not placeholders.
fn needs_sense_lookup(label: &str) -> bool {
    !is_placeholder(label)
        && label.chars().next().is_some_and(|c| c.is_ascii_lowercase())
        && label.chars().all(|c| c.is_ascii_lowercase() || c == '-' || c.is_ascii_digit())
        && strip_sense(label) == label
}
