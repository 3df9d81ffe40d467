//! Multi-token phrases that map to a single EDS node.

use std::collections::BTreeMap;

use super::anchors::span_of_anchor;
use super::eds::is_surface_node;
use crate::graph::{char_slice, CompanionSentence, CompanionToken, MrpGraph};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MultiwordStats {
    /// Occurrences covered exactly by one surface node.
    pub single: usize,
    /// All occurrences of the phrase as a token run.
    pub total: usize,
}

impl MultiwordStats {
    pub fn probability(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.single as f64 / self.total as f64
        }
    }

    pub fn merges(&self) -> bool {
        merge_decision(self.probability(), self.single)
    }
}

/// Merge iff the phrase maps to one node more than half the time and that
/// single-node reading was seen at least twice.
pub fn merge_decision(probability: f64, count: usize) -> bool {
    probability > 0.5 && count >= 2
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MultiwordTable {
    pub entries: BTreeMap<String, MultiwordStats>,
}

fn phrase_key(tokens: &[CompanionToken]) -> String {
    tokens.iter().map(|t| t.form.to_lowercase()).collect::<Vec<_>>().join(" ")
}

impl MultiwordTable {
    pub fn get(&self, phrase: &str) -> Option<MultiwordStats> {
        self.entries.get(&phrase.to_lowercase()).copied()
    }

    fn max_len(&self) -> usize {
        self.entries.keys().map(|k| k.split(' ').count()).max().unwrap_or(0)
    }

    /// `phrase \t single \t total` lines.
    pub fn to_lines(&self) -> String {
        self.entries
            .iter()
            .map(|(k, s)| format!("{k}\t{}\t{}\n", s.single, s.total))
            .collect()
    }

    pub fn from_lines(doc: &str) -> Option<Self> {
        let mut entries = BTreeMap::new();
        for line in doc.lines().filter(|l| !l.trim().is_empty()) {
            let mut cols = line.split('\t');
            let phrase = cols.next()?.to_string();
            let single = cols.next()?.parse().ok()?;
            let total = cols.next()?.parse().ok()?;
            entries.insert(phrase, MultiwordStats { single, total });
        }
        Some(MultiwordTable { entries })
    }
}

/// Count, for every multi-token span exactly covered by a surface node, how
/// often it is a single node versus how often the token run occurs at all.
pub fn build_multiword_table<'a, I>(corpus: I) -> MultiwordTable
where
    I: IntoIterator<Item = (&'a MrpGraph, &'a CompanionSentence)> + Clone,
{
    let mut entries: BTreeMap<String, MultiwordStats> = BTreeMap::new();
    for (g, c) in corpus.clone() {
        let mut spans = Vec::new();
        for n in &g.nodes {
            let Some(range) = n.anchor_range() else { continue };
            if !is_surface_node(g, n) {
                continue;
            }
            if let Some((span, false)) = span_of_anchor(range, c) {
                if span.len() >= 2 && !spans.contains(&span) {
                    spans.push(span);
                }
            }
        }
        for span in spans {
            entries.entry(phrase_key(&c.tokens[span.start..=span.end])).or_default().single += 1;
        }
    }
    let max_len = entries.keys().map(|k| k.split(' ').count()).max().unwrap_or(0);
    for (_, c) in corpus {
        for len in 2..=max_len.min(c.len()) {
            for s in 0..=c.len() - len {
                if let Some(st) = entries.get_mut(&phrase_key(&c.tokens[s..s + len])) {
                    st.total += 1;
                }
            }
        }
    }
    MultiwordTable { entries }
}

/// Greedily merge the longest mergeable phrases, left to right. The merged
/// token's form is the input slice it covers; lemmas are joined with `+`.
/// Returns the new sentence and, for every old token, its new index.
pub fn merge_multiwords(c: &CompanionSentence, input: &str, table: &MultiwordTable) -> (CompanionSentence, Vec<usize>) {
    let max_len = table.max_len();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut map = Vec::with_capacity(c.len());
    let mut i = 0;
    while i < c.len() {
        let len = (2..=max_len.min(c.len() - i))
            .rev()
            .find(|&len| table.get(&phrase_key(&c.tokens[i..i + len])).is_some_and(|s| s.merges()))
            .unwrap_or(1);
        let run = &c.tokens[i..i + len];
        let tok = if len == 1 {
            run[0].clone()
        } else {
            let (start, end) = (run[0].start, run[len - 1].end);
            CompanionToken {
                form: char_slice(input, start, end),
                lemma: run.iter().map(|t| t.lemma.as_str()).collect::<Vec<_>>().join("+"),
                xpos: run[len - 1].xpos.clone(),
                start,
                end,
            }
        };
        map.extend(std::iter::repeat_n(tokens.len(), len));
        tokens.push(tok);
        tags.push(c.ner_tags.get(i).cloned().unwrap_or_else(|| "O".into()));
        i += len;
    }
    (
        CompanionSentence {
            id: c.id.clone(),
            tokens,
            ner_tags: tags,
        },
        map,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Framework, MrpNode};

    fn sent(text: &str) -> CompanionSentence {
        let mut start = 0;
        let tokens = text
            .split(' ')
            .map(|f| {
                let t = CompanionToken::new(f, f, "X", start);
                start = t.end + 1;
                t
            })
            .collect();
        CompanionSentence::new(None, tokens)
    }

    /// "such as" as one node when `single`, as two otherwise.
    fn such_as(single: bool) -> (MrpGraph, CompanionSentence) {
        let text = "cats such as lions";
        let c = sent(text);
        let mut g = MrpGraph::new("s", Framework::Eds, text);
        if single {
            g.nodes.push(MrpNode::new(0, "_such+as").with_anchor(5, 12));
        } else {
            g.nodes.push(MrpNode::new(0, "_such").with_anchor(5, 9));
            g.nodes.push(MrpNode::new(1, "_as").with_anchor(10, 12));
        }
        (g, c)
    }

    #[test]
    fn counts_match_oracle() {
        let corpus: Vec<_> = (0..10).map(|k| such_as(k < 8)).collect();
        let t = build_multiword_table(corpus.iter().map(|(g, c)| (g, c)));
        let s = t.get("such as").unwrap();
        assert_eq!(s, MultiwordStats { single: 8, total: 10 });
        assert!((s.probability() - 0.8).abs() < 1e-12);
        assert!(s.merges());
        assert_eq!(MultiwordTable::from_lines(&t.to_lines()).unwrap(), t);
    }

    #[test]
    fn single_occurrence_does_not_merge() {
        let corpus = [such_as(true)];
        let t = build_multiword_table(corpus.iter().map(|(g, c)| (g, c)));
        let s = t.get("such as").unwrap();
        assert_eq!((s.probability(), s.single), (1.0, 1));
        assert!(!s.merges());
    }

    #[test]
    fn decision_is_pure() {
        assert!(!merge_decision(0.0, 5));
        assert!(!merge_decision(0.5, 5));
        assert!(merge_decision(0.51, 2));
        assert!(!merge_decision(0.9, 1));
    }

    #[test]
    fn merging_joins_tokens() {
        let corpus: Vec<_> = (0..3).map(|_| such_as(true)).collect();
        let t = build_multiword_table(corpus.iter().map(|(g, c)| (g, c)));
        let (g, c) = such_as(false);
        let (m, map) = merge_multiwords(&c, &g.input, &t);
        let forms: Vec<&str> = m.tokens.iter().map(|t| t.form.as_str()).collect();
        assert_eq!(forms, ["cats", "such as", "lions"]);
        assert_eq!(m.tokens[1].lemma, "such+as");
        assert_eq!((m.tokens[1].start, m.tokens[1].end), (5, 12));
        assert_eq!(map, [0, 1, 1, 2]);
    }
}
